//! Batched forward pass with hand-written reverse mode.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::{conv_index, extract_qubit, kron2, symmetrize_kernel, Factor, Part, SeparatorParams};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64, ZERO};
use crate::states::{DensityMatrix, DIM, N_QUBITS};

/// Samples per work item. Results are reduced in chunk order, so the
/// outcome does not depend on the thread count.
const CHUNK: usize = 64;

pub(crate) struct ForwardOut {
    /// Per sample, per channel `[A, B, C]`.
    pub factors: Vec<Vec<[Factor; 3]>>,
    /// `acts[q][l]` is the input of FC layer `l` for qubit `q`; the last
    /// entry holds the final features.
    acts: Vec<Vec<Array2<f64>>>,
    /// `pres[q][l]` is the pre-activation of FC layer `l`.
    pres: Vec<Vec<Array2<f64>>>,
}

struct Parts {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Parts {
    fn of(rho: &DensityMatrix) -> Self {
        Parts {
            re: rho.matrix().real_parts(),
            im: rho.matrix().imag_parts(),
        }
    }

    fn get(&self, part: Part) -> &[f64] {
        match part {
            Part::Re => &self.re,
            Part::Im => &self.im,
        }
    }
}

fn effective_kernels(params: &SeparatorParams) -> Vec<Vec<[[f64; 16]; 2]>> {
    let cfg = params.config();
    (0..cfg.n_param_paths())
        .map(|p| {
            (0..cfg.n_k)
                .map(|ch| {
                    [
                        params.effective_kernel(p, ch, Part::Re),
                        params.effective_kernel(p, ch, Part::Im),
                    ]
                })
                .collect()
        })
        .collect()
}

fn forward_parts(params: &SeparatorParams, parts: &[Parts]) -> ForwardOut {
    let cfg = *params.config();
    let d = cfg.width();
    let b = parts.len();
    let kernels = effective_kernels(params);

    let mut acts = Vec::with_capacity(N_QUBITS);
    let mut pres = Vec::with_capacity(N_QUBITS);
    for q in 0..N_QUBITS {
        let path = cfg.path_of(q);
        let mut h0 = Array2::<f64>::zeros((b, d));
        for (s, x) in parts.iter().enumerate() {
            let mut row = h0.row_mut(s);
            for (ch, k) in kernels[path].iter().enumerate() {
                let re = extract_qubit(x.get(Part::Re), q, &k[0]);
                let im = extract_qubit(x.get(Part::Im), q, &k[1]);
                for e in 0..4 {
                    row[8 * ch + e] = re[e];
                    row[8 * ch + 4 + e] = im[e];
                }
            }
        }
        let mut layer_acts = vec![h0];
        let mut layer_pres = Vec::new();
        if cfg.use_fc {
            for l in 0..cfg.fc_depth {
                let h = layer_acts.last().expect("input");
                let mut z = h.dot(&params.fc_weight(path, l).t());
                z += &params.fc_bias(path, l);
                let next = if l + 1 < cfg.fc_depth {
                    z.mapv(|x| cfg.activation.apply(x))
                } else {
                    z.clone()
                };
                layer_pres.push(z);
                layer_acts.push(next);
            }
        }
        acts.push(layer_acts);
        pres.push(layer_pres);
    }

    let factors = (0..b)
        .map(|s| {
            (0..cfg.n_k)
                .map(|ch| {
                    std::array::from_fn(|q| {
                        let row = acts[q].last().expect("features").row(s);
                        std::array::from_fn(|e| C64::new(row[8 * ch + e], row[8 * ch + 4 + e]))
                    })
                })
                .collect()
        })
        .collect();
    ForwardOut {
        factors,
        acts,
        pres,
    }
}

pub(crate) fn forward_batch(params: &SeparatorParams, states: &[DensityMatrix]) -> Result<ForwardOut> {
    params.config().validate()?;
    let parts: Vec<Parts> = states.iter().map(Parts::of).collect();
    Ok(forward_parts(params, &parts))
}

/// Per-state reconstruction losses.
pub fn batch_losses(params: &SeparatorParams, states: &[DensityMatrix]) -> Vec<f64> {
    states
        .par_chunks(CHUNK)
        .map(|chunk| {
            let parts: Vec<Parts> = chunk.iter().map(Parts::of).collect();
            let out = forward_parts(params, &parts);
            chunk
                .iter()
                .zip(&out.factors)
                .map(|(rho, f)| super::loss(rho.matrix(), &super::decode(f)))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

pub struct BatchOutput {
    pub mean_loss: f64,
    pub losses: Vec<f64>,
    /// Gradient of the mean loss.
    pub grad: SeparatorParams,
}

/// Mean loss over `states` and its gradient with respect to every
/// parameter. Fails with [`Error::Divergence`] on a non-finite loss.
pub fn batch_gradient(params: &SeparatorParams, states: &[DensityMatrix]) -> Result<BatchOutput> {
    params.config().validate()?;
    if states.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let partials: Vec<(Vec<f64>, SeparatorParams)> = states
        .par_chunks(CHUNK)
        .map(|chunk| chunk_gradient(params, chunk))
        .collect();

    let mut grad = SeparatorParams::zeros(*params.config())?;
    let mut losses = Vec::with_capacity(states.len());
    for (l, g) in partials {
        losses.extend(l);
        grad.add_scaled(&g, 1.0);
    }
    let n = states.len() as f64;
    grad.scale(1.0 / n);
    if params.config().tie_weights {
        let cfg = *params.config();
        for ch in 0..cfg.n_k {
            for part in [Part::Re, Part::Im] {
                let k = grad.kernel_mut(0, ch, part);
                let mut tmp = [0.0; 16];
                tmp.copy_from_slice(k);
                symmetrize_kernel(&mut tmp);
                k.copy_from_slice(&tmp);
            }
        }
    }
    let mean_loss = losses.iter().sum::<f64>() / n;
    if !mean_loss.is_finite() || !grad.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss or gradient (loss = {mean_loss})")));
    }
    Ok(BatchOutput {
        mean_loss,
        losses,
        grad,
    })
}

/// Unnormalised loss sums and gradients for one chunk.
fn chunk_gradient(params: &SeparatorParams, chunk: &[DensityMatrix]) -> (Vec<f64>, SeparatorParams) {
    let cfg = *params.config();
    let d = cfg.width();
    let b = chunk.len();
    let parts: Vec<Parts> = chunk.iter().map(Parts::of).collect();
    let out = forward_parts(params, &parts);

    let mut d_feat: Vec<Array2<f64>> = (0..N_QUBITS).map(|_| Array2::zeros((b, d))).collect();
    let mut losses = Vec::with_capacity(b);
    for (s, (rho, factors)) in chunk.iter().zip(&out.factors).enumerate() {
        let (loss, grads) = decode_backward(rho.matrix(), factors);
        losses.push(loss);
        for (ch, g) in grads.iter().enumerate() {
            for (q, gq) in g.iter().enumerate() {
                let mut row = d_feat[q].row_mut(s);
                for e in 0..4 {
                    row[8 * ch + e] = gq[e].re;
                    row[8 * ch + 4 + e] = gq[e].im;
                }
            }
        }
    }

    let mut grad = SeparatorParams::zeros(cfg).expect("validated");
    for (q, mut dh) in d_feat.into_iter().enumerate() {
        let path = cfg.path_of(q);
        if cfg.use_fc {
            for l in (0..cfg.fc_depth).rev() {
                let dz = if l + 1 < cfg.fc_depth {
                    let act = cfg.activation;
                    let mut dz = dh;
                    dz.zip_mut_with(&out.pres[q][l], |g, &z| *g *= act.derivative(z));
                    dz
                } else {
                    dh
                };
                grad.fc_weight_mut(path, l)
                    .scaled_add(1.0, &dz.t().dot(&out.acts[q][l]));
                grad.fc_bias_mut(path, l).scaled_add(1.0, &dz.sum_axis(Axis(0)));
                dh = dz.dot(&params.fc_weight(path, l));
            }
        }
        for (s, x) in parts.iter().enumerate() {
            let row = dh.row(s);
            for ch in 0..cfg.n_k {
                for part in [Part::Re, Part::Im] {
                    let input = x.get(part);
                    let off = 8 * ch + 4 * part as usize;
                    let dk = grad.kernel_mut(path, ch, part);
                    for i in 0..2 {
                        for j in 0..2 {
                            let g = row[off + 2 * i + j];
                            if g == 0.0 {
                                continue;
                            }
                            for k in 0..4 {
                                let r = conv_index(q, i, k) * DIM;
                                for kq in 0..4 {
                                    dk[4 * k + kq] += g * input[r + conv_index(q, j, kq)];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (losses, grad)
}

/// Loss of the decoded reconstruction and the gradient with respect to
/// every factor, as `∂L/∂Re + i ∂L/∂Im`.
pub(crate) fn decode_backward(rho: &CMatrix, factors: &[[Factor; 3]]) -> (f64, Vec<[Factor; 3]>) {
    let (sum, norm) = super::kron_sum(factors);
    let traced = sum.trace().re.abs() > super::TRACE_GUARD;
    let rho_hat = sum.scale_real(1.0 / norm);
    let n2 = (DIM * DIM) as f64;

    let mut loss = 0.0;
    let mut g_hat = vec![ZERO; DIM * DIM];
    for ((g, a), b) in g_hat.iter_mut().zip(rho.as_slice()).zip(rho_hat.as_slice()) {
        let diff = a - b;
        let m = diff.norm();
        loss += m;
        if m > 0.0 {
            *g = -diff / (m * n2);
        }
    }
    loss /= n2;

    let mut g_sum: Vec<C64> = g_hat.iter().map(|g| g / norm).collect();
    if traced {
        let inner: f64 = g_hat
            .iter()
            .zip(rho_hat.as_slice())
            .map(|(g, r)| g.re * r.re + g.im * r.im)
            .sum();
        for a in 0..DIM {
            g_sum[a * DIM + a].re -= inner / norm;
        }
    }

    let grads = factors
        .iter()
        .map(|[fa, fb, fc]| {
            let bc = kron2(fb, fc);
            let mut ga = [ZERO; 4];
            let mut gbc = [ZERO; 16];
            for ar in 0..2 {
                for ac in 0..2 {
                    let a_conj = fa[2 * ar + ac].conj();
                    let mut acc = ZERO;
                    for k in 0..4 {
                        for kk in 0..4 {
                            let g = g_sum[(4 * ar + k) * DIM + 4 * ac + kk];
                            acc += g * bc[4 * k + kk].conj();
                            gbc[4 * k + kk] += g * a_conj;
                        }
                    }
                    ga[2 * ar + ac] = acc;
                }
            }
            let mut gb = [ZERO; 4];
            let mut gc = [ZERO; 4];
            for br in 0..2 {
                for bcol in 0..2 {
                    for cr in 0..2 {
                        for ccol in 0..2 {
                            let g = gbc[4 * (2 * br + cr) + 2 * bcol + ccol];
                            gb[2 * br + bcol] += g * fc[2 * cr + ccol].conj();
                            gc[2 * cr + ccol] += g * fb[2 * br + bcol].conj();
                        }
                    }
                }
            }
            [ga, gb, gc]
        })
        .collect();
    (loss, grads)
}
