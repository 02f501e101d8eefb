//! Session encoders. Each turns the ordered item embeddings of a session
//! prefix into one vector and can back-propagate into its own parameters
//! and into the item rows it consumed.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Mean,
    Gru,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Mean => "mean",
            EncoderKind::Gru => "gru",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(EncoderKind::Mean),
            "gru" => Ok(EncoderKind::Gru),
            other => Err(Error::Config(format!("unknown encoder {other:?} (expected mean or gru)"))),
        }
    }
}

/// Activations kept from a forward pass, consumed by `backward`.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    pub output: Vec<f64>,
    inner: TraceInner,
}

#[derive(Clone, Debug)]
enum TraceInner {
    Mean { len: usize },
    Gru(GruTrace),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    /// Same layout as `SessionEncoder::parameters`.
    pub params: Vec<f64>,
    /// One gradient row per consumed item.
    pub inputs: Vec<Vec<f64>>,
}

pub trait SessionEncoder: Send + Sync {
    fn kind(&self) -> EncoderKind;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn dropout(&self) -> f64;
    fn num_parameters(&self) -> usize;
    fn parameters(&self) -> Vec<f64>;
    fn set_parameters(&mut self, flat: &[f64]) -> Result<()>;

    /// Encodes `items` in order. Passing an rng turns on training-mode
    /// dropout; `None` is the deterministic inference path.
    fn forward(&self, items: &[&[f64]], dropout_rng: Option<&mut dyn RngCore>) -> Result<EncoderTrace>;

    fn backward(&self, trace: &EncoderTrace, upstream: &[f64]) -> Result<EncoderGrads>;

    /// Re-runs a forward pass with the dropout decisions recorded in `trace`.
    fn replay(&self, items: &[&[f64]], trace: &EncoderTrace) -> Result<EncoderTrace>;

    fn clone_box(&self) -> Box<dyn SessionEncoder>;

    fn encode(&self, items: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(self.forward(items, None)?.output)
    }
}

fn check_items(items: &[&[f64]], dim: usize) -> Result<()> {
    if items.is_empty() {
        return Err(Error::EmptySession);
    }
    for x in items {
        if x.len() != dim {
            return Err(Error::Shape {
                expected: dim,
                actual: x.len(),
            });
        }
    }
    Ok(())
}

/// Arithmetic mean of the item rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanPoolEncoder {
    dim: usize,
}

impl MeanPoolEncoder {
    pub fn new(dim: usize) -> Self {
        MeanPoolEncoder { dim }
    }
}

impl SessionEncoder for MeanPoolEncoder {
    fn kind(&self) -> EncoderKind {
        EncoderKind::Mean
    }
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn dropout(&self) -> f64 {
        0.0
    }
    fn num_parameters(&self) -> usize {
        0
    }
    fn parameters(&self) -> Vec<f64> {
        Vec::new()
    }
    fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.is_empty() {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: 0,
                actual: flat.len(),
            })
        }
    }

    fn forward(&self, items: &[&[f64]], _dropout_rng: Option<&mut dyn RngCore>) -> Result<EncoderTrace> {
        check_items(items, self.dim)?;
        let mut out = vec![0.0; self.dim];
        for x in items {
            crate::linalg::axpy(1.0, x, &mut out);
        }
        let l = items.len() as f64;
        out.iter_mut().for_each(|v| *v /= l);
        Ok(EncoderTrace {
            output: out,
            inner: TraceInner::Mean { len: items.len() },
        })
    }

    fn backward(&self, trace: &EncoderTrace, upstream: &[f64]) -> Result<EncoderGrads> {
        let TraceInner::Mean { len } = trace.inner else {
            return Err(Error::TraceMismatch("mean"));
        };
        if upstream.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                actual: upstream.len(),
            });
        }
        let row: Vec<f64> = upstream.iter().map(|g| g / len as f64).collect();
        Ok(EncoderGrads {
            params: Vec::new(),
            inputs: vec![row; len],
        })
    }

    fn replay(&self, items: &[&[f64]], _trace: &EncoderTrace) -> Result<EncoderTrace> {
        self.forward(items, None)
    }

    fn clone_box(&self) -> Box<dyn SessionEncoder> {
        Box::new(self.clone())
    }
}

/// Gate weights of a single GRU cell (input `d_in`, hidden `d_hid`).
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Vec<f64>,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Vec<f64>,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Vec<f64>,
}

impl GruParams {
    pub fn zeros(d_in: usize, d_hid: usize) -> Self {
        let w = || Matrix::zeros(d_hid, d_in);
        let u = || Matrix::zeros(d_hid, d_hid);
        GruParams {
            w_z: w(),
            u_z: u(),
            b_z: vec![0.0; d_hid],
            w_r: w(),
            u_r: u(),
            b_r: vec![0.0; d_hid],
            w_h: w(),
            u_h: u(),
            b_h: vec![0.0; d_hid],
        }
    }

    /// Uniform in `±1/√d_hid`.
    pub fn random(d_in: usize, d_hid: usize, seed: u64) -> Self {
        let mut p = Self::zeros(d_in, d_hid);
        let bound = 1.0 / (d_hid as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slice in p.slices_mut() {
            slice.iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_z.len()
    }

    fn slices(&self) -> [&[f64]; 9] {
        [
            &self.w_z.data,
            &self.u_z.data,
            &self.b_z,
            &self.w_r.data,
            &self.u_r.data,
            &self.b_r,
            &self.w_h.data,
            &self.u_h.data,
            &self.b_h,
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 9] {
        [
            &mut self.w_z.data,
            &mut self.u_z.data,
            &mut self.b_z,
            &mut self.w_r.data,
            &mut self.u_r.data,
            &mut self.b_r,
            &mut self.w_h.data,
            &mut self.u_h.data,
            &mut self.b_h,
        ]
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct GruStepCache {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    rh: Vec<f64>,
    h_tilde: Vec<f64>,
}

#[derive(Clone, Debug)]
struct GruTrace {
    /// Inputs after dropout.
    inputs: Vec<Vec<f64>>,
    /// Inverted-dropout scale per input entry (1.0 when dropout is off).
    masks: Option<Vec<Vec<f64>>>,
    steps: Vec<GruStepCache>,
}

fn gru_step_cached(x: &[f64], h: &[f64], p: &GruParams) -> (Vec<f64>, GruStepCache) {
    let gate = |w: &Matrix, u: &Matrix, b: &[f64], hh: &[f64]| {
        let mut a = b.to_vec();
        w.matvec_acc(x, &mut a);
        u.matvec_acc(hh, &mut a);
        a
    };
    let z: Vec<f64> = gate(&p.w_z, &p.u_z, &p.b_z, h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate(&p.w_r, &p.u_r, &p.b_r, h).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let h_tilde: Vec<f64> = gate(&p.w_h, &p.u_h, &p.b_h, &rh).into_iter().map(f64::tanh).collect();
    let h_next = (0..h.len())
        .map(|i| (1.0 - z[i]) * h[i] + z[i] * h_tilde[i])
        .collect();
    (
        h_next,
        GruStepCache {
            h_prev: h.to_vec(),
            z,
            r,
            rh,
            h_tilde,
        },
    )
}

/// One GRU cell update: `h′ = (1−z)⊙h + z⊙h̃`.
pub fn gru_step(x: &[f64], h: &[f64], params: &GruParams) -> Result<Vec<f64>> {
    if x.len() != params.input_dim() {
        return Err(Error::Shape {
            expected: params.input_dim(),
            actual: x.len(),
        });
    }
    if h.len() != params.hidden_dim() {
        return Err(Error::Shape {
            expected: params.hidden_dim(),
            actual: h.len(),
        });
    }
    Ok(gru_step_cached(x, h, params).0)
}

/// GRU over the session prefix from a zero initial state; the final hidden
/// state is the session vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GruEncoder {
    pub params: GruParams,
    pub dropout: f64,
}

impl GruEncoder {
    pub fn new(d_in: usize, d_hid: usize, dropout: f64, seed: u64) -> Self {
        GruEncoder {
            params: GruParams::random(d_in, d_hid, seed),
            dropout,
        }
    }

    /// Forward with explicit dropout scales; used to replay a training pass.
    fn forward_with_masks(&self, items: &[&[f64]], masks: Option<Vec<Vec<f64>>>) -> Result<EncoderTrace> {
        check_items(items, self.params.input_dim())?;
        let inputs: Vec<Vec<f64>> = match &masks {
            Some(m) => items
                .iter()
                .zip(m)
                .map(|(x, m)| x.iter().zip(m).map(|(a, b)| a * b).collect())
                .collect(),
            None => items.iter().map(|x| x.to_vec()).collect(),
        };
        let mut h = vec![0.0; self.params.hidden_dim()];
        let mut steps = Vec::with_capacity(inputs.len());
        for x in &inputs {
            let (next, cache) = gru_step_cached(x, &h, &self.params);
            steps.push(cache);
            h = next;
        }
        Ok(EncoderTrace {
            output: h,
            inner: TraceInner::Gru(GruTrace { inputs, masks, steps }),
        })
    }

}

impl SessionEncoder for GruEncoder {
    fn kind(&self) -> EncoderKind {
        EncoderKind::Gru
    }
    fn input_dim(&self) -> usize {
        self.params.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.params.hidden_dim()
    }
    fn dropout(&self) -> f64 {
        self.dropout
    }
    fn num_parameters(&self) -> usize {
        self.params.len()
    }
    fn parameters(&self) -> Vec<f64> {
        self.params.flatten()
    }
    fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        self.params.assign(flat)
    }

    fn forward(&self, items: &[&[f64]], dropout_rng: Option<&mut dyn RngCore>) -> Result<EncoderTrace> {
        let masks = match dropout_rng {
            Some(rng) if self.dropout > 0.0 => {
                let keep = 1.0 - self.dropout;
                Some(
                    items
                        .iter()
                        .map(|x| {
                            x.iter()
                                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                                .collect()
                        })
                        .collect(),
                )
            }
            _ => None,
        };
        self.forward_with_masks(items, masks)
    }

    fn backward(&self, trace: &EncoderTrace, upstream: &[f64]) -> Result<EncoderGrads> {
        let TraceInner::Gru(t) = &trace.inner else {
            return Err(Error::TraceMismatch("gru"));
        };
        let p = &self.params;
        let d_hid = p.hidden_dim();
        if upstream.len() != d_hid {
            return Err(Error::Shape {
                expected: d_hid,
                actual: upstream.len(),
            });
        }
        let mut g = GruParams::zeros(p.input_dim(), d_hid);
        let mut dx_all = vec![vec![0.0; p.input_dim()]; t.steps.len()];
        let mut dh_next = upstream.to_vec();

        for (step, (cache, x)) in t.steps.iter().zip(&t.inputs).enumerate().rev() {
            let GruStepCache {
                h_prev,
                z,
                r,
                rh,
                h_tilde,
            } = cache;
            let mut dh = vec![0.0; d_hid];
            let mut da_z = vec![0.0; d_hid];
            let mut da_h = vec![0.0; d_hid];
            for i in 0..d_hid {
                let dz = dh_next[i] * (h_tilde[i] - h_prev[i]);
                da_z[i] = dz * z[i] * (1.0 - z[i]);
                da_h[i] = dh_next[i] * z[i] * (1.0 - h_tilde[i] * h_tilde[i]);
                dh[i] = dh_next[i] * (1.0 - z[i]);
            }
            let dx = &mut dx_all[step];

            // candidate
            g.w_h.add_outer(&da_h, x);
            g.u_h.add_outer(&da_h, rh);
            crate::linalg::axpy(1.0, &da_h, &mut g.b_h);
            p.w_h.tmatvec_acc(&da_h, dx);
            let drh = p.u_h.tmatvec(&da_h);
            let mut da_r = vec![0.0; d_hid];
            for i in 0..d_hid {
                dh[i] += drh[i] * r[i];
                da_r[i] = drh[i] * h_prev[i] * r[i] * (1.0 - r[i]);
            }

            // reset gate
            g.w_r.add_outer(&da_r, x);
            g.u_r.add_outer(&da_r, h_prev);
            crate::linalg::axpy(1.0, &da_r, &mut g.b_r);
            p.w_r.tmatvec_acc(&da_r, dx);
            p.u_r.tmatvec_acc(&da_r, &mut dh);

            // update gate
            g.w_z.add_outer(&da_z, x);
            g.u_z.add_outer(&da_z, h_prev);
            crate::linalg::axpy(1.0, &da_z, &mut g.b_z);
            p.w_z.tmatvec_acc(&da_z, dx);
            p.u_z.tmatvec_acc(&da_z, &mut dh);

            dh_next = dh;
        }
        if let Some(masks) = &t.masks {
            for (dx, m) in dx_all.iter_mut().zip(masks) {
                dx.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
            }
        }
        Ok(EncoderGrads {
            params: g.flatten(),
            inputs: dx_all,
        })
    }

    fn replay(&self, items: &[&[f64]], trace: &EncoderTrace) -> Result<EncoderTrace> {
        let TraceInner::Gru(t) = &trace.inner else {
            return Err(Error::TraceMismatch("gru"));
        };
        self.forward_with_masks(items, t.masks.clone())
    }

    fn clone_box(&self) -> Box<dyn SessionEncoder> {
        Box::new(self.clone())
    }
}

pub fn build_encoder(kind: EncoderKind, d_in: usize, d_out: usize, dropout: f64, seed: u64) -> Result<Box<dyn SessionEncoder>> {
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::Config(format!("dropout {dropout} must lie in [0, 1)")));
    }
    match kind {
        EncoderKind::Mean => {
            if d_in != d_out {
                return Err(Error::Config(format!(
                    "mean-pool encoder needs equal input and output dims, got {d_in} and {d_out}"
                )));
            }
            Ok(Box::new(MeanPoolEncoder::new(d_in)))
        }
        EncoderKind::Gru => Ok(Box::new(GruEncoder::new(d_in, d_out, dropout, seed))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_vecs(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn mean_pool_of_singleton_and_duplicates() {
        let enc = MeanPoolEncoder::new(3);
        let v = vec![0.5, -1.0, 2.0];
        assert_eq!(enc.encode(&[&v]).unwrap(), v);
        assert_eq!(enc.encode(&[&v, &v]).unwrap(), v);
        assert!(matches!(enc.encode(&[]), Err(Error::EmptySession)));
    }

    #[test]
    fn mean_pool_backward_spreads_evenly() {
        let enc = MeanPoolEncoder::new(2);
        let items = rand_vecs(4, 2, 1);
        let trace = enc.forward(&refs(&items), None).unwrap();
        let grads = enc.backward(&trace, &[1.0, -2.0]).unwrap();
        assert_eq!(grads.inputs, vec![vec![0.25, -0.5]; 4]);
        let zero = enc.backward(&trace, &[0.0, 0.0]).unwrap();
        assert!(zero.inputs.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_gru_outputs_zero() {
        let enc = GruEncoder {
            params: GruParams::zeros(3, 4),
            dropout: 0.0,
        };
        let items = rand_vecs(3, 3, 2);
        assert_eq!(enc.encode(&refs(&items)).unwrap(), vec![0.0; 4]);
        assert_eq!(gru_step(&[1.0, 2.0, 3.0], &[0.0; 4], &enc.params).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn saturated_update_gate_copies_candidate() {
        let mut p = GruParams::random(3, 3, 9);
        p.b_z = vec![50.0; 3];
        let x = [0.3, -0.2, 0.9];
        let h = [0.5, 0.1, -0.4];
        let out = gru_step(&x, &h, &p).unwrap();
        let (_, cache) = gru_step_cached(&x, &h, &p);
        for i in 0..3 {
            assert!((out[i] - cache.h_tilde[i]).abs() < 1e-12);
        }
        assert!(gru_step(&x[..2], &h, &p).is_err());
        assert!(gru_step(&x, &h[..2], &p).is_err());
    }

    /// Scalar-loop GRU cell written independently of the matrix helpers.
    fn naive_gru_step(x: &[f64], h: &[f64], p: &GruParams) -> Vec<f64> {
        let (din, dh) = (x.len(), h.len());
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut z = vec![0.0; dh];
        let mut r = vec![0.0; dh];
        for i in 0..dh {
            let mut az = p.b_z[i];
            let mut ar = p.b_r[i];
            for j in 0..din {
                az += p.w_z.data[i * din + j] * x[j];
                ar += p.w_r.data[i * din + j] * x[j];
            }
            for j in 0..dh {
                az += p.u_z.data[i * dh + j] * h[j];
                ar += p.u_r.data[i * dh + j] * h[j];
            }
            z[i] = sig(az);
            r[i] = sig(ar);
        }
        let mut out = vec![0.0; dh];
        for i in 0..dh {
            let mut a = p.b_h[i];
            for j in 0..din {
                a += p.w_h.data[i * din + j] * x[j];
            }
            for j in 0..dh {
                a += p.u_h.data[i * dh + j] * r[j] * h[j];
            }
            out[i] = (1.0 - z[i]) * h[i] + z[i] * a.tanh();
        }
        out
    }

    #[test]
    fn gru_step_matches_naive_reference() {
        for seed in 0..5 {
            let p = GruParams::random(4, 3, seed);
            let x = &rand_vecs(1, 4, seed + 100)[0];
            let h = &rand_vecs(1, 3, seed + 200)[0];
            let fast = gru_step(x, h, &p).unwrap();
            let slow = naive_gru_step(x, h, &p);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn fd_check(enc: &mut GruEncoder, items: &[Vec<f64>], upstream: &[f64], trace: &EncoderTrace, tol: f64) {
        let objective = |enc: &GruEncoder, items: &[Vec<f64>]| -> f64 {
            let out = enc.replay(&refs(items), trace).unwrap().output;
            out.iter().zip(upstream).map(|(a, b)| a * b).sum()
        };
        let grads = enc.backward(trace, upstream).unwrap();
        let h = 1e-6;
        let base = enc.parameters();
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus[k] += h;
            let mut minus = base.clone();
            minus[k] -= h;
            enc.set_parameters(&plus).unwrap();
            let up = objective(enc, items);
            enc.set_parameters(&minus).unwrap();
            let down = objective(enc, items);
            let numeric = (up - down) / (2.0 * h);
            let rel = (grads.params[k] - numeric).abs() / numeric.abs().max(1.0);
            assert!(rel < tol, "param {k}: {} vs {numeric}", grads.params[k]);
        }
        enc.set_parameters(&base).unwrap();
        for i in 0..items.len() {
            for j in 0..items[i].len() {
                let mut plus = items.to_vec();
                plus[i][j] += h;
                let mut minus = items.to_vec();
                minus[i][j] -= h;
                let numeric = (objective(enc, &plus) - objective(enc, &minus)) / (2.0 * h);
                let rel = (grads.inputs[i][j] - numeric).abs() / numeric.abs().max(1.0);
                assert!(rel < tol, "input {i},{j}: {} vs {numeric}", grads.inputs[i][j]);
            }
        }
    }

    #[test]
    fn gru_backward_matches_finite_differences() {
        let mut enc = GruEncoder::new(3, 3, 0.0, 11);
        let items = rand_vecs(2, 3, 12);
        let trace = enc.forward(&refs(&items), None).unwrap();
        fd_check(&mut enc, &items, &[0.7, -0.3, 1.1], &trace, 1e-4);
    }

    #[test]
    fn gru_backward_with_dropout_mask() {
        let mut enc = GruEncoder::new(4, 3, 0.5, 13);
        let items = rand_vecs(3, 4, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let trace = enc.forward(&refs(&items), Some(&mut rng)).unwrap();
        fd_check(&mut enc, &items, &[0.2, 0.4, -0.9], &trace, 1e-4);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let enc = GruEncoder::new(3, 2, 0.0, 1);
        let items = rand_vecs(3, 3, 2);
        let trace = enc.forward(&refs(&items), None).unwrap();
        let g = enc.backward(&trace, &[0.0, 0.0]).unwrap();
        assert!(g.params.iter().chain(g.inputs.iter().flatten()).all(|&x| x == 0.0));
    }

    #[test]
    fn inference_is_pure_and_traces_are_typed() {
        let enc = GruEncoder::new(3, 2, 0.7, 1);
        let items = rand_vecs(3, 3, 2);
        assert_eq!(enc.encode(&refs(&items)).unwrap(), enc.encode(&refs(&items)).unwrap());
        let mean = MeanPoolEncoder::new(3);
        let mean_trace = mean.forward(&refs(&items), None).unwrap();
        assert!(matches!(enc.backward(&mean_trace, &[0.0, 0.0]), Err(Error::TraceMismatch(_))));
        let gru_trace = enc.forward(&refs(&items), None).unwrap();
        assert!(mean.backward(&gru_trace, &[0.0; 3]).is_err());
    }

    #[test]
    fn mean_encoder_rejects_dim_change() {
        assert!(build_encoder(EncoderKind::Mean, 4, 3, 0.0, 0).is_err());
        assert!(build_encoder(EncoderKind::Gru, 4, 3, 1.0, 0).is_err());
        assert_eq!(build_encoder(EncoderKind::Gru, 4, 3, 0.5, 0).unwrap().output_dim(), 3);
    }
}
