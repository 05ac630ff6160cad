use super::format::{self, decode, encode, verify_labels, HEADER_LEN, RECORD_LEN};
use super::*;
use crate::oracles::StateClass;
use crate::separator::{Activation, SeparatorConfig, SeparatorParams};

#[test]
fn sizes_follow_scale() {
    assert_eq!(training_sizes(0.04).unwrap(), (21200, 2000));
    assert_eq!(training_sizes(1.0).unwrap(), (530_000, 50_000));
    assert!(training_sizes(0.0).is_err());
    assert!(training_sizes(1.5).is_err());
    assert!(build_test_sets(-1.0, 0).is_err());
}

#[test]
fn split_keeps_total() {
    for n in [0, 1, 7, 100, 2001] {
        let s = split(n, &[0.18, 0.18, 0.23, 0.19, 0.22]);
        assert_eq!(s.iter().sum::<usize>(), n);
    }
}

#[test]
fn training_sets_are_separable_with_expected_mix() {
    let (train, val) = build_training_sets(0.002, 5).unwrap();
    assert_eq!(train.len(), 1060);
    assert_eq!(val.len(), 100);
    for ds in [&train, &val] {
        assert!(ds.records.iter().all(|r| r.label.klass != StateClass::Entangled));
    }
    let counts = train.class_counts();
    // every separable class is represented
    for c in ["product", "non-discordant", "discordant-separable"] {
        assert!(counts[c] > 0, "{c}: {counts:?}");
    }
    let pure = train.filter(Subset::Pure).len() as f64 / train.len() as f64;
    assert!((pure - 0.36).abs() < 0.01, "{pure}");
    let nps = train.filter(Subset::Nps);
    assert!(nps.records.iter().all(|r| !r.label.is_product));
    assert!(train.filter(Subset::Prod).records.iter().all(|r| r.label.is_product));
    assert_eq!(train.filter(Subset::Sep).len(), train.len());
    let zd = train.filter(Subset::Zd);
    assert!(zd.records.iter().all(|r| r.label.is_zero_discord()));
    assert!(zd.len() >= train.filter(Subset::Prod).len());
}

#[test]
fn generation_is_deterministic() {
    let a = mixed_test_set(60, 9, 4);
    let b = mixed_test_set(60, 9, 4);
    assert_eq!(encode(&a), encode(&b));
    let c = mixed_test_set(60, 10, 4);
    assert_ne!(encode(&a), encode(&c));
}

#[test]
fn pure_test_set_is_balanced() {
    let (pure, _) = build_test_sets_sized(101, 0, 3);
    assert_eq!(pure.len(), 202);
    let ent = pure.records.iter().filter(|r| r.label.klass == StateClass::Entangled).count();
    assert_eq!(ent, 101);
    assert!(pure.records.iter().all(|r| r.is_pure()));
}

#[test]
fn mixed_test_set_covers_all_classes() {
    let (_, mixed) = build_test_sets(0.01, 4).unwrap();
    assert_eq!(mixed.len(), 650);
    let counts = mixed.class_counts();
    assert!(counts.values().all(|&n| n > 0), "{counts:?}");
    for r in &mixed.records {
        if r.label.klass == StateClass::Entangled {
            let max = Cut::ALL.iter().map(|&c| negativity(&r.rho, c)).fold(0.0, f64::max);
            assert!(max > MIN_MIXED_NEGATIVITY);
        }
    }
}

#[test]
fn qsd1_round_trip() {
    let ds = mixed_test_set(25, 1, 4);
    let bytes = encode(&ds);
    assert_eq!(bytes.len(), HEADER_LEN + 25 * RECORD_LEN);
    assert_eq!(&bytes[..4], b"QSD1");
    let back = decode(&bytes).unwrap();
    assert_eq!(back.records, ds.records);
    assert_eq!(verify_labels(&back, 1.0, 0).unwrap(), 25);
}

fn format_offset(e: Error) -> u64 {
    match e {
        Error::Format { offset, .. } => offset,
        other => panic!("expected a format error, got {other}"),
    }
}

#[test]
fn qsd1_errors_name_offsets() {
    let ds = mixed_test_set(3, 2, 4);
    let bytes = encode(&ds);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(format_offset(decode(&bad).unwrap_err()), 0);

    let mut bad = bytes.clone();
    bad[4] = 2;
    assert_eq!(format_offset(decode(&bad).unwrap_err()), 4);

    let mut bad = bytes.clone();
    bad[8] = 4;
    assert_eq!(format_offset(decode(&bad).unwrap_err()), 8);

    let truncated = &bytes[..bytes.len() - 10];
    assert_eq!(
        format_offset(decode(truncated).unwrap_err()),
        (HEADER_LEN + 2 * RECORD_LEN) as u64
    );
    assert!(decode(&bytes[..5]).is_err());

    let mut bad = bytes.clone();
    bad.push(0);
    assert_eq!(format_offset(decode(&bad).unwrap_err()), bytes.len() as u64);

    // label with an unused bit set
    let mut bad = bytes.clone();
    let at = HEADER_LEN + RECORD_LEN + RECORD_LEN - 1;
    bad[at] |= 0x80;
    assert_eq!(format_offset(decode(&bad).unwrap_err()), (at - 1) as u64);

    // non-Hermitian matrix in the first record: flip sign of Im ρ_01
    let mut bad = bytes.clone();
    let at = HEADER_LEN + 8 * 3;
    let v = f64::from_le_bytes(bad[at..at + 8].try_into().unwrap());
    bad[at..at + 8].copy_from_slice(&(-v + 0.5).to_le_bytes());
    assert_eq!(format_offset(decode(&bad).unwrap_err()), HEADER_LEN as u64);
}

#[test]
fn verification_catches_swapped_labels() {
    let mut ds = mixed_test_set(40, 3, 4);
    let ent = ds.records.iter().position(|r| r.label.klass == StateClass::Entangled).unwrap();
    let sep = ds.records.iter().position(|r| r.label.klass == StateClass::Product).unwrap();
    let l = ds.records[sep].label;
    ds.records[ent].label = l;
    let bytes = encode(&ds);
    let back = decode(&bytes).unwrap();
    let err = verify_labels(&back, 1.0, 0).unwrap_err();
    assert_eq!(
        format_offset(err),
        (HEADER_LEN + ent.min(sep) * RECORD_LEN + 1024) as u64
    );
}

#[test]
fn file_round_trip_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.qsd");
    let ds = separable_set("x", 30, 4, 1);
    format::save(&ds, &path).unwrap();
    let back = format::load(&path).unwrap();
    assert_eq!(back.records, ds.records);
    let mut csv = Vec::new();
    format::write_csv(&ds, "seed=4", &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 32);
    assert!(text.starts_with("# seed=4\nlabel,klass,v0,"));
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 32,
        seed,
        separator: SeparatorConfig {
            n_k: 4,
            fc_depth: 2,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn training_is_deterministic_and_selects_best() {
    let train_set = separable_set("t", 200, 1, 1);
    let val = separable_set("v", 50, 1, 2);
    let cfg = tiny_config(3);
    let a = train(&cfg, &train_set, &val, None, |_| {}).unwrap();
    let b = train(&cfg, &train_set, &val, None, |_| {}).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.checkpoint, b.checkpoint);

    let r = &a.report;
    assert_eq!(r.epochs.len(), 3);
    let min = r.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(r.best().val_loss, min);
    assert!(r.best().train_loss <= r.epochs[0].train_loss);
    // the returned checkpoint reproduces the selected validation loss
    let states = val.states();
    let l = crate::separator::batch_losses(&a.checkpoint.params, &states);
    let m = l.iter().sum::<f64>() / l.len() as f64;
    assert!((m - min).abs() < 1e-14);
}

#[test]
fn product_training_from_identity_starts_near_zero_loss() {
    let train_set = separable_set("t", 300, 2, 1);
    let val = separable_set("v", 200, 2, 2);
    let cfg = TrainConfig {
        subset: Subset::Prod,
        epochs: 1,
        ..tiny_config(4)
    };
    let start = SeparatorParams::identity(cfg.separator).unwrap();
    let out = train_from(&cfg, start, &train_set, &val, None, |_| {}).unwrap();
    // epoch 0 is the state before any update
    assert!(out.report.initial_val_loss <= 1e-3, "{:?}", out.report);

    let other = SeparatorParams::identity(SeparatorConfig { n_k: 5, ..cfg.separator }).unwrap();
    assert!(train_from(&cfg, other, &train_set, &val, None, |_| {}).is_err());
}

#[test]
fn checkpoint_is_written_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let train_set = separable_set("t", 64, 3, 1);
    let val = separable_set("v", 16, 3, 2);
    let cfg = TrainConfig {
        epochs: 1,
        separator: SeparatorConfig {
            activation: Activation::Tanh,
            ..tiny_config(0).separator
        },
        ..tiny_config(5)
    };
    let out = train(&cfg, &train_set, &val, Some(&path), |_| {}).unwrap();
    let loaded = crate::separator::checkpoint::Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, out.checkpoint);
    assert_eq!(loaded.meta.epoch, 1);
}

#[test]
fn exploding_updates_abort_as_divergence() {
    let train_set = separable_set("t", 64, 3, 1);
    let val = separable_set("v", 16, 3, 2);
    let cfg = TrainConfig {
        optimizer: Optimizer::Sgd,
        learning_rate: 1e300,
        ..tiny_config(6)
    };
    match train(&cfg, &train_set, &val, None, |_| {}) {
        Err(Error::Divergence(_)) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("expected divergence"),
    }
}

#[test]
fn invalid_train_configs() {
    let ds = separable_set("t", 10, 3, 1);
    for cfg in [
        TrainConfig { epochs: 0, ..Default::default() },
        TrainConfig { learning_rate: 0.0, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
    ] {
        assert!(train(&cfg, &ds, &ds, None, |_| {}).is_err());
    }
    let only_pure = ds.filter(Subset::Pure);
    let cfg = TrainConfig { subset: Subset::Prod, ..tiny_config(0) };
    let no_products = Dataset {
        records: only_pure.records.into_iter().filter(|r| !r.label.is_product).collect(),
        ..Default::default()
    };
    assert!(train(&cfg, &no_products, &no_products, None, |_| {}).is_err());
}

#[test]
fn subset_names_parse() {
    for s in Subset::ALL {
        assert_eq!(s.name().parse::<Subset>().unwrap(), s);
    }
    assert!("nope".parse::<Subset>().is_err());
}
