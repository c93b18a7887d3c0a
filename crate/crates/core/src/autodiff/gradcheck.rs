use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::{Padding, PoolKind, Tensor};
use crate::error::Result;

const STEP: f64 = 1e-4;
const DENOM_FLOOR: f64 = 1e-8;
/// Central differences at `h` and `h / 2` agree to O(h^2) on smooth
/// functions; a larger gap means a kink (ReLU, max) lies within the step.
const KINK_TOL: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|)`, with the denominator floored at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Entries compared.
    pub checked: usize,
    /// Entries skipped because a non-differentiable point lies within one
    /// step of the sample.
    pub kinks: usize,
    /// `(input, entry, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheck {
    /// Error below `tol` with at most 5% of entries skipped as kinks.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.kinks * 20 <= self.checked + self.kinks
    }
}

type Op<'a> = dyn Fn(&mut Graph<f64>, &[Var<f64>]) -> Result<Var<f64>> + 'a;

fn scalar_output(
    g: &mut Graph<f64>,
    f: &Op<'_>,
    inputs: &[Var<f64>],
    weights: &mut Option<Vec<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<Var<f64>> {
    let y = f(g, inputs)?;
    if y.value().numel() == 1 {
        return Ok(y);
    }
    let w = weights.get_or_insert_with(|| (0..y.value().numel()).map(|_| rng.random_range(-1.0..1.0)).collect());
    g.weighted_sum(&y, w)
}

/// Central-difference check of `f` on inputs drawn uniformly from `[-1, 1]`.
/// Non-scalar outputs are reduced by a fixed random weighting.
pub fn grad_check<F>(input_dims: &[&[usize]], seed: u64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = input_dims
        .iter()
        .map(|d| {
            let n = d.iter().product();
            Tensor::new(d, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    grad_check_at(inputs, seed, usize::MAX, f)
}

/// Central-difference check of `f` at the given inputs, comparing at most
/// `max_entries` randomly chosen entries per input.
pub fn grad_check_at<F>(inputs: Vec<Tensor<f64>>, seed: u64, max_entries: usize, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut weights = None;
    let mut g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = scalar_output(&mut g, &f, &vars, &mut weights, &mut rng)?;
    let grads = g.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&inputs)
        .map(|(v, t)| grads.wrt(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    drop(g);

    let eval = |point: &[Tensor<f64>], weights: &mut Option<Vec<f64>>, rng: &mut ChaCha8Rng| -> Result<f64> {
        let mut g = Graph::inference();
        let vars: Vec<_> = point.iter().map(|t| g.constant(t.clone())).collect();
        Ok(scalar_output(&mut g, &f, &vars, weights, rng)?.data()[0])
    };

    let mut out = GradCheck { max_rel_error: 0.0, checked: 0, kinks: 0, worst: None };
    let mut point = inputs;
    for k in 0..point.len() {
        let n = point[k].numel();
        let mut entries: Vec<usize> = (0..n).collect();
        if n > max_entries {
            for i in 0..max_entries {
                let j = rng.random_range(i..n);
                entries.swap(i, j);
            }
            entries.truncate(max_entries);
        }
        for i in entries {
            let orig = point[k].data()[i];
            point[k].data_mut()[i] = orig + STEP;
            let up = eval(&point, &mut weights, &mut rng)?;
            point[k].data_mut()[i] = orig - STEP;
            let down = eval(&point, &mut weights, &mut rng)?;
            point[k].data_mut()[i] = orig + STEP / 2.0;
            let half_up = eval(&point, &mut weights, &mut rng)?;
            point[k].data_mut()[i] = orig - STEP / 2.0;
            let half_down = eval(&point, &mut weights, &mut rng)?;
            point[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let half = (half_up - half_down) / STEP;
            if (numeric - half).abs() > KINK_TOL * numeric.abs().max(half.abs()) + 1e-9 {
                out.kinks += 1;
                continue;
            }
            let a = analytic[k][i];
            let e = relative_error(a, numeric);
            out.checked += 1;
            if e > out.max_rel_error || out.worst.is_none() {
                out.max_rel_error = out.max_rel_error.max(e);
                out.worst = Some((k, i, a, numeric));
            }
        }
    }
    Ok(out)
}

/// Finite-difference checks of every differentiable primitive, plus the
/// softmax-then-KL composite. Returns one named result per case.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut out = Vec::new();
    macro_rules! case {
        ($name:expr, $dims:expr, $f:expr) => {
            out.push(($name, grad_check($dims, seed, $f)?));
        };
    }
    case!("add", &[&[2, 3], &[2, 3]], |g, v| g.add(&v[0], &v[1]));
    case!("scale", &[&[4]], |g, v| g.scale(&v[0], -0.7));
    case!("relu", &[&[3, 5]], |g, v| g.relu(&v[0]));
    case!("softmax", &[&[3, 4]], |g, v| g.softmax(&v[0]));
    case!("dense", &[&[2, 3, 4], &[4, 5], &[5]], |g, v| g.dense(&v[0], &v[1], Some(&v[2])));
    case!("batched_matmul", &[&[2, 3, 4], &[2, 4, 5]], |g, v| g.batched_matmul(&v[0], &v[1], false));
    case!("batched_matmul_t", &[&[2, 3, 4], &[2, 5, 4]], |g, v| g.batched_matmul(&v[0], &v[1], true));
    case!("reshape", &[&[2, 6]], |g, v| g.reshape(&v[0], &[3, 4]));
    case!("permute", &[&[2, 3, 4]], |g, v| g.permute(&v[0], &[2, 0, 1]));
    case!("concat", &[&[2, 2], &[2, 3]], |g, v| g.concat_last(&[&v[0], &v[1]]));
    case!("sum", &[&[7]], |g, v| g.sum(&v[0]));
    case!("l2_penalty", &[&[6]], |g, v| g.l2_penalty(&v[0], 0.3));
    case!("conv2d_same", &[&[2, 2, 5, 6], &[3, 2, 3, 3], &[3]], |g, v| {
        g.conv2d(&v[0], &v[1], Some(&v[2]), Padding::Same)
    });
    case!("conv2d_same_even", &[&[1, 2, 6, 5], &[2, 2, 4, 1]], |g, v| { g.conv2d(&v[0], &v[1], None, Padding::Same) });
    case!("conv2d_valid", &[&[1, 2, 5, 5], &[2, 2, 2, 3], &[2]], |g, v| {
        g.conv2d(&v[0], &v[1], Some(&v[2]), Padding::Valid)
    });
    case!("conv2d_1x1", &[&[2, 3, 3, 4], &[2, 3, 1, 1], &[2]], |g, v| g.conv2d(
        &v[0],
        &v[1],
        Some(&v[2]),
        Padding::Same
    ));
    case!("avg_pool", &[&[2, 2, 5, 4]], |g, v| g.pool2d(&v[0], PoolKind::Avg, (2, 2), (2, 2)));
    case!("max_pool", &[&[2, 2, 5, 4]], |g, v| g.pool2d(&v[0], PoolKind::Max, (2, 2), (2, 2)));
    case!("mean_axis", &[&[2, 3, 4]], |g, v| g.reduce_axis(&v[0], 1, PoolKind::Avg));
    case!("max_axis", &[&[2, 3, 4]], |g, v| g.reduce_axis(&v[0], 2, PoolKind::Max));
    case!("batch_norm_train", &[&[3, 2, 2, 3], &[2], &[2]], |g, v| {
        Ok(g.batch_norm(&v[0], &v[1], &v[2], &[0.0; 2], &[1.0; 2], true)?.0)
    });
    case!("batch_norm_eval", &[&[3, 2, 2, 3], &[2], &[2]], |g, v| {
        Ok(g.batch_norm(&v[0], &v[1], &v[2], &[0.1, -0.2], &[0.5, 2.0], false)?.0)
    });
    case!("instance_norm", &[&[2, 2, 3, 5]], |g, v| g.instance_norm_freq(&v[0]));
    case!("dropout", &[&[20]], |g, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        g.dropout(&v[0], 0.3, &mut rng)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let probs = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| -> Result<Tensor<f64>> {
        let mut d: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.05..1.0)).collect();
        for r in d.chunks_mut(cols) {
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v /= s);
        }
        Tensor::new(&[rows, cols], d)
    };
    let target = probs(&mut rng, 3, 4)?;
    let pred = probs(&mut rng, 3, 4)?;
    let t = target.clone();
    out.push(("kl_div", grad_check_at(vec![pred], seed, usize::MAX, move |g, v| g.kl_div(&v[0], &t))?));
    out.push((
        "softmax_kl",
        grad_check(&[&[3, 4]], seed, move |g, v| {
            let p = g.softmax(&v[0])?;
            g.kl_div(&p, &target)
        })?,
    ));
    Ok(out)
}
