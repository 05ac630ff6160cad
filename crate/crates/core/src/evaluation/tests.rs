use super::*;
use crate::oracles::StateLabel;
use crate::separator::Baseline;
use crate::states::DensityMatrix;
use crate::training::{mixed_test_set, separable_set, Subset};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs()
}

#[test]
fn table_ii_counts_give_published_ba() {
    let c = Confusion { tp: 20461, fn_: 942, tn: 30696, fp: 12901 };
    assert!(rel(c.recall(), 0.9560).abs() < 1e-4);
    assert!(rel(c.specificity(), 0.7041) < 1e-4);
    assert!(rel(c.balanced_accuracy(), 0.830) < 5e-4);
}

#[test]
fn table_iii_counts_give_published_ba() {
    let c = Confusion { tn: 25114, fp: 1192, fn_: 3531, tp: 35163 };
    let want = 0.5 * (35163.0 / 38694.0 + 25114.0 / 26306.0);
    assert!(rel(c.balanced_accuracy(), want) < 1e-15);
    assert!(rel(c.balanced_accuracy(), 0.932) < 5e-4);
}

#[test]
fn precision_defaults_to_one() {
    let c = Confusion { tp: 0, fp: 0, tn: 5, fn_: 3 };
    assert_eq!(c.precision(), 1.0);
}

#[test]
fn grid_is_log_spaced() {
    let g = log_grid(400, 1e-5, 1.0);
    assert_eq!(g.len(), 400);
    assert!((g[0] - 1e-5).abs() < 1e-18 && (g[399] - 1.0).abs() < 1e-12);
    let r = g[1] / g[0];
    assert!(g.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-9));
    assert!(EvalConfig::new(LabelMode::Discord).validate().is_ok());
    let bad = EvalConfig { thresholds: vec![0.1, 0.01], ..EvalConfig::new(LabelMode::Discord) };
    assert!(bad.validate().is_err());
}

fn synthetic(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = r.random::<bool>();
            let l = 10f64.powf(if p { -2.0 } else { -3.0 } + r.random::<f64>() * 1.5 - 0.75);
            (l, p)
        })
        .unzip()
}

#[test]
fn sweep_extremes_and_conservation() {
    let (l, p) = synthetic(500, 1);
    let grid = [1e-9, 1e-3, 1e9];
    let c = sweep_losses(&l, &p, LabelMode::Discord, &grid).unwrap();
    for pt in &c.points {
        assert_eq!(pt.counts.total(), 500);
    }
    let low = &c.points[0];
    assert_eq!(low.recall, 1.0);
    assert_eq!(low.counts.tn, 0);
    let high = &c.points[2];
    assert_eq!(high.counts.tp, 0);
    assert_eq!(high.balanced_accuracy, 0.5);
    assert_eq!(high.precision, 1.0);
    assert_eq!(high.counts.fp + high.counts.tp, 0);
}

#[test]
fn sweep_is_monotone() {
    let (l, p) = synthetic(800, 2);
    let grid = log_grid(400, 1e-5, 1.0);
    let c = sweep_losses(&l, &p, LabelMode::Entanglement, &grid).unwrap();
    for w in c.points.windows(2) {
        assert!(w[1].recall <= w[0].recall);
        assert!(w[1].counts.tn >= w[0].counts.tn);
    }
    let best = c.points.iter().map(|p| p.balanced_accuracy).fold(0.0, f64::max);
    assert_eq!(c.best_ba(), best);
}

#[test]
fn ba_invariant_under_positive_duplication() {
    let (l, p) = synthetic(300, 3);
    let grid = log_grid(100, 1e-5, 1.0);
    let base = sweep_losses(&l, &p, LabelMode::Discord, &grid).unwrap();
    let (mut l3, mut p3) = (l.clone(), p.clone());
    for _ in 0..2 {
        for (x, &q) in l.iter().zip(&p) {
            if q {
                l3.push(*x);
                p3.push(true);
            }
        }
    }
    let dup = sweep_losses(&l3, &p3, LabelMode::Discord, &grid).unwrap();
    for (a, b) in base.points.iter().zip(&dup.points) {
        assert!((a.balanced_accuracy - b.balanced_accuracy).abs() < 1e-12);
    }
}

#[test]
fn perfect_separation_has_no_errors() {
    let l = [0.001, 0.002, 0.1, 0.2];
    let p = [false, false, true, true];
    let c = confusion_from_losses(&l, &p, 0.01);
    assert_eq!(c, Confusion { tp: 2, fp: 0, tn: 2, fn_: 0 });
    let inf = confusion_from_losses(&l, &p, f64::INFINITY);
    assert_eq!(inf.tp + inf.fp, 0);
}

#[test]
fn single_class_is_rejected() {
    let ds = separable_set("p", 40, 1, 1).filter(Subset::Prod);
    assert!(sweep(&Baseline, &ds, &EvalConfig::new(LabelMode::Entanglement)).is_err());
    assert!(confusion_at(&Baseline, &ds, 0.01, LabelMode::Entanglement).is_err());
}

struct Zero;

impl LossModel for Zero {
    fn name(&self) -> String {
        "zero".into()
    }

    fn losses(&self, states: &[DensityMatrix]) -> Vec<f64> {
        vec![0.0; states.len()]
    }
}

#[test]
fn class_means() {
    let ds = mixed_test_set(200, 5, 4);
    for m in class_mean_losses(&Zero, &ds) {
        assert_eq!(m.mean_loss, Some(0.0));
    }
    let products = separable_set("p", 60, 1, 1).filter(Subset::Prod);
    let means = class_mean_losses(&Baseline, &products);
    assert!(means[0].mean_loss.unwrap() <= 1e-10);
    let ent = means.iter().find(|m| m.group == LossGroup::Entangled).unwrap();
    assert_eq!(ent.count, 0);
    assert_eq!(ent.mean_loss, None);
    let mut csv = Vec::new();
    write_class_means_csv(&means, "seed=1", &mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().contains("entangled,0,\n"));
}

#[test]
fn discordant_group_includes_entangled() {
    let l = StateLabel::from_flags([true, false, false], [true; 6], false);
    assert!(LossGroup::Discordant.contains(&l));
    assert!(LossGroup::Entangled.contains(&l));
    assert!(LabelMode::Discord.is_positive(&l));
}

#[test]
fn map_grid_baseline_properties() {
    let grid = MapGrid::new(51).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for k in &grid.klass {
        seen.insert(k.name());
    }
    assert_eq!(seen.len(), 4, "{seen:?}");

    let map = grid.render(&Baseline);
    assert_eq!(map.cells.len(), 51 * 51);
    // point A is cell (12.5 steps) -> pick exact grid point u = v = 0.52
    let a = map
        .cells
        .iter()
        .min_by(|x, y| {
            let dx = (x.u - 0.5).hypot(x.v - 0.5);
            let dy = (y.u - 0.5).hypot(y.v - 0.5);
            dx.total_cmp(&dy)
        })
        .unwrap();
    assert!(a.loss < 1e-3);
    for c in &map.cells {
        match c.klass {
            StateClass::Product => assert!(c.loss <= 1e-10, "{c:?}"),
            StateClass::NonDiscordant => assert!(c.loss > 1e-3, "{c:?}"),
            _ => {}
        }
    }
    assert!(MapGrid::new(10).is_err());
}

#[test]
fn map_outputs_have_expected_shape() {
    let map = render_map(&Baseline, 11).unwrap();
    let mut csv = Vec::new();
    map.write_csv("seed=0 checkpoint=none", &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 2 + 121);
    let mut pgm = Vec::new();
    map.write_pgm("seed=0", &mut pgm).unwrap();
    let text = String::from_utf8(pgm).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "P2");
    assert_eq!(lines[2], "11 11");
    assert_eq!(lines[3], "255");
    assert_eq!(lines.len(), 4 + 11);
    let values: Vec<u32> = lines[4..].iter().flat_map(|l| l.split(' ').map(|x| x.parse().unwrap())).collect();
    assert_eq!(values.len(), 121);
    assert_eq!(*values.iter().max().unwrap(), 255);
    assert_eq!(*values.iter().min().unwrap(), 0);
}

#[test]
fn iou_of_oracle_itself_is_one() {
    let map = render_map(&Baseline, 21).unwrap();
    let fake = MapResult {
        grid_n: 21,
        cells: map
            .cells
            .iter()
            .map(|c| MapCell { loss: if oracle_zero_discord(c.klass) { 0.0 } else { 1.0 }, ..*c })
            .collect(),
    };
    assert_eq!(fake.iou(0.5), 1.0);
}
