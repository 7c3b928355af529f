//! Central-difference checks of tape gradients, and a fixed suite covering
//! every operation and layer alone and composed into an encoder.

use crate::layers::{affine, layer_norm, self_attention};
use crate::rng::seeded;
use crate::{Encoder, EncoderConfig, ParamStore, Tape, Tensor, Var};

/// Coordinates whose analytic and numeric gradients are both below this
/// are skipped.
pub const GRAD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|)`.
    pub worst: f64,
    pub checked: usize,
    /// Where `worst` occurred, as `input[index]` or `param[index]`.
    pub at: String,
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        let scale = analytic.abs().max(numeric.abs());
        if scale <= GRAD_FLOOR {
            return;
        }
        self.checked += 1;
        let rel = (analytic - numeric).abs() / scale;
        if rel >= self.worst {
            self.worst = rel;
            self.at = at();
        }
    }
}

fn step(p: f64) -> f64 {
    1e-5 * p.abs().max(1.0)
}

/// Gradient of the scalar built by `build` with respect to every input.
/// Inputs are recreated as leaves on every call so the closure can be
/// re-evaluated at perturbed values.
pub fn check_inputs<F>(inputs: &[Tensor], build: F) -> GradReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");
    let mut report = GradReport::default();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for i in 0..input.len() {
            let p = input.data()[i];
            let h = step(p);
            let eval = |delta: f64| {
                let mut perturbed = inputs.to_vec();
                perturbed[k].data_mut()[i] = p + delta;
                let mut tape = Tape::new();
                let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
                let out = build(&mut tape, &vars);
                tape.value(out).data()[0]
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            report.record(analytic.data()[i], numeric, || format!("input {k}[{i}]"));
        }
    }
    report
}

/// Gradient of `loss_of(store)` with respect to every parameter in `store`.
pub fn check_params<F>(store: &ParamStore, loss_of: F) -> GradReport
where
    F: Fn(&ParamStore) -> (Tape, Var),
{
    let (tape, loss) = loss_of(store);
    let grads = tape.backward(loss).expect("scalar loss").for_params(&tape, store);
    let mut report = GradReport::default();
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            let p = store.get(id).data()[i];
            let h = step(p);
            let eval = |delta: f64| {
                let mut s = store.clone();
                s.get_mut(id).data_mut()[i] = p + delta;
                let (tape, l) = loss_of(&s);
                tape.value(l).data()[0]
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            report.record(grads[id.index()].data()[i], numeric, || format!("{}[{i}]", store.name(id)));
        }
    }
    report
}

/// Contracts an arbitrary-shaped output to a scalar with fixed random weights.
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let w = tape.leaf(Tensor::randn(&shape, 1.0, &mut seeded(seed)));
    let prod = tape.mul(y, w).expect("same shape");
    tape.sum(prod)
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut seeded(seed))
}

/// Every tape operation and layer on small seeded inputs, then all
/// parameters of a two-layer encoder under an MSE loss.
pub fn standard_suite() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();
    out.push((
        "matmul",
        check_inputs(&[randn(&[3, 4], 1), randn(&[4, 5], 2)], |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            project(t, y, 9)
        }),
    ));
    out.push((
        "matmul_t",
        check_inputs(&[randn(&[3, 4], 3), randn(&[6, 4], 4)], |t, v| {
            let y = t.matmul_t(v[0], v[1]).unwrap();
            project(t, y, 9)
        }),
    ));
    out.push((
        "elementwise and broadcast",
        check_inputs(&[randn(&[3, 4], 5), randn(&[3, 4], 6), randn(&[1, 4], 7)], |t, v| {
            let a = t.add(v[0], v[1]).unwrap();
            let b = t.sub(a, v[1]).unwrap();
            let c = t.mul(b, v[1]).unwrap();
            let d = t.add_row(c, v[2]).unwrap();
            let e = t.mul_row(d, v[2]).unwrap();
            let f = t.scale(e, -0.7);
            project(t, f, 10)
        }),
    ));
    out.push((
        "affine",
        check_inputs(&[randn(&[4, 3], 11), randn(&[3, 5], 12), randn(&[1, 5], 13)], |t, v| {
            let y = affine(t, v[0], v[1], Some(v[2])).unwrap();
            project(t, y, 14)
        }),
    ));
    let mut x = randn(&[5, 6], 15);
    x.scale_assign(2.5);
    out.push((
        "gelu",
        check_inputs(&[x], |t, v| {
            let y = t.gelu(v[0]);
            project(t, y, 16)
        }),
    ));
    out.push((
        "softmax",
        check_inputs(&[randn(&[4, 7], 17)], |t, v| {
            let y = t.softmax_rows(v[0]);
            project(t, y, 18)
        }),
    ));
    let mut gamma = randn(&[1, 6], 20);
    gamma.data_mut().iter_mut().for_each(|g| *g += 1.0);
    out.push((
        "layer norm",
        check_inputs(&[randn(&[4, 6], 19), gamma, randn(&[1, 6], 21)], |t, v| {
            let y = layer_norm(t, v[0], v[1], v[2]).unwrap();
            project(t, y, 22)
        }),
    ));
    let d = 8;
    let mut wqkv = randn(&[d, 3 * d], 24);
    wqkv.scale_assign(0.4);
    out.push((
        "self-attention",
        check_inputs(
            &[randn(&[5, d], 23), wqkv, randn(&[1, 3 * d], 25), randn(&[d, d], 26), randn(&[1, d], 27)],
            |t, v| {
                let y = self_attention(t, v[0], 2, v[1], Some(v[2]), v[3], Some(v[4])).unwrap();
                project(t, y, 28)
            },
        ),
    ));
    out.push((
        "slice, concat, reshape, mse, sum",
        check_inputs(&[randn(&[4, 6], 29), randn(&[2, 5], 30), randn(&[5, 4], 31)], |t, v| {
            let a = t.slice_cols(v[0], 1, 3).unwrap();
            let b = t.slice_cols(v[0], 4, 2).unwrap();
            let c = t.concat_cols(&[b, a]).unwrap();
            let r = t.slice_rows(c, 1, 2).unwrap();
            let rows = t.concat_rows(&[r, v[1]]).unwrap();
            let shaped = t.reshape(v[2], 4, 5).unwrap();
            let top = t.slice_rows(shaped, 0, 4).unwrap();
            let m = t.mse(rows, top).unwrap();
            let s = t.sum(v[1]);
            t.add(m, s).unwrap()
        }),
    ));

    let mut rng = seeded(40);
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, "enc", EncoderConfig { d_model: 8, heads: 2, layers: 2, d_ff: 12 }, &mut rng);
    let input = Tensor::randn(&[4, 8], 1.0, &mut rng);
    let target = Tensor::randn(&[4, 8], 1.0, &mut rng);
    out.push((
        "two-layer encoder parameters",
        check_params(&store, |s| {
            let mut tape = Tape::new();
            let x = tape.leaf(input.clone());
            let y = enc.forward(&mut tape, s, x).unwrap();
            let t = tape.leaf(target.clone());
            let l = tape.mse(y, t).unwrap();
            (tape, l)
        }),
    ));
    out
}
