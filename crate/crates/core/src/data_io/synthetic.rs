use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linear_solver;
use crate::matrix::Matrix;
use crate::model::{Component, ComponentKind, Dataset, Layer, Registry, Role};
use crate::rng::{self, Rng as ChaRng};

const RESAMPLE_BUDGET: usize = 100;
const EXPERTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Teacher {
    Linear,
    MlpTeacher,
    SumOfExperts,
}

impl std::str::FromStr for Teacher {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Teacher::Linear),
            "mlp-teacher" | "mlp" => Ok(Teacher::MlpTeacher),
            "sum-of-experts" => Ok(Teacher::SumOfExperts),
            _ => Err(Error::Config(format!(
                "unknown teacher `{s}` (expected linear, mlp-teacher or sum-of-experts)"
            ))),
        }
    }
}

/// Synthetic regression task. Each component is a perturbed copy of the
/// teacher whose RMS deviation from it is `quality * std(teacher)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub true_function: Teacher,
    pub noise_sd: f64,
    pub component_quality: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_hidden() -> usize {
    8
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.m == 0 || self.hidden == 0 {
            return Err(Error::Config("n, d, m and hidden must be positive".into()));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::Config(format!("noise_sd {} must be finite and non-negative", self.noise_sd)));
        }
        if let Some(q) = self.component_quality.iter().find(|q| !(q.is_finite() && **q >= 0.0)) {
            return Err(Error::Config(format!("component quality {q} must be finite and non-negative")));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config("train_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub dataset: Dataset,
    /// Pre-trained components `f1..fK`, all reading every feature.
    pub components: Registry,
    /// Noise-free teacher, kept for reference.
    pub teacher: Vec<Component>,
}

fn normal(r: &mut ChaRng) -> f64 {
    r.sample(StandardNormal)
}

fn teacher_parts(spec: &SyntheticTaskSpec, r: &mut ChaRng) -> Result<Vec<Component>> {
    let (d, m, h) = (spec.d, spec.m, spec.hidden);
    let make = |id: &str, sizes: &[usize], r: &mut ChaRng| {
        Component::mlp(id, ComponentKind::PreTrained, Role::Base, sizes, Activation::Tanh, r)
    };
    Ok(match spec.true_function {
        Teacher::Linear => {
            let scale = 1.0 / (d as f64).sqrt();
            let weights = (0..m * d).map(|_| normal(r) * scale).collect();
            let bias = (0..m).map(|_| normal(r) * 0.1).collect();
            vec![Component {
                id: "teacher".into(),
                kind: ComponentKind::PreTrained,
                role: Role::Base,
                input_columns: None,
                layers: vec![Layer {
                    shape: [m, d],
                    weights,
                    bias,
                    activation: Activation::Linear,
                    frozen: true,
                }],
            }]
        }
        Teacher::MlpTeacher => vec![make("teacher", &[d, h, m], r)?],
        Teacher::SumOfExperts => (0..EXPERTS)
            .map(|e| make(&format!("expert{}", e + 1), &[d, h.div_ceil(2).max(1), m], r))
            .collect::<Result<_>>()?,
    })
}

fn eval_sum(parts: &[Component], x: &Matrix) -> Result<Matrix> {
    let mut out = parts[0].forward(x)?;
    for p in &parts[1..] {
        let o = p.forward(x)?;
        out.as_mut_slice().iter_mut().zip(o.as_slice()).for_each(|(a, b)| *a += b);
    }
    Ok(out)
}

fn perturbed(parts: &[Component], dirs: &[Vec<Vec<f64>>], s: f64) -> Vec<Component> {
    parts
        .iter()
        .zip(dirs)
        .map(|(p, dir)| {
            let mut c = p.clone();
            for (l, d) in c.layers.iter_mut().zip(dir) {
                let nw = l.weights.len();
                for (w, v) in l.weights.iter_mut().zip(&d[..nw]) {
                    *w += s * v;
                }
                for (b, v) in l.bias.iter_mut().zip(&d[nw..]) {
                    *b += s * v;
                }
            }
            c
        })
        .collect()
}

fn rms_diff(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.as_slice().len() as f64;
    (a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n).sqrt()
}

/// Scales a random weight direction until the copy deviates from the teacher
/// by `target` in RMS over `x`.
fn component_at_quality(parts: &[Component], x: &Matrix, clean: &Matrix, target: f64, r: &mut ChaRng) -> Result<Vec<Component>> {
    let dirs: Vec<Vec<Vec<f64>>> = parts
        .iter()
        .map(|p| {
            p.layers
                .iter()
                .map(|l| (0..l.weights.len() + l.bias.len()).map(|_| normal(r)).collect())
                .collect()
        })
        .collect();
    if target == 0.0 {
        return Ok(parts.to_vec());
    }
    let dev = |s: f64| -> Result<f64> { Ok(rms_diff(&eval_sum(&perturbed(parts, &dirs, s), x)?, clean)) };
    let mut hi = target.max(1e-3);
    let mut grow = 0;
    while dev(hi)? < target {
        hi *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::Degenerate(format!("cannot reach component deviation {target}")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if dev(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(perturbed(parts, &dirs, hi))
}

fn flatten_single(parts: Vec<Component>, id: String) -> Result<Component> {
    if parts.len() == 1 {
        let mut c = parts.into_iter().next().expect("one part");
        c.id = id;
        return Ok(c);
    }
    // experts share the same input and are stacked into one wider network
    let d = parts[0].input_dim();
    let m = parts[0].output_dim();
    let hidden: Vec<usize> = parts.iter().map(|p| p.layers[0].outputs()).collect();
    let total: usize = hidden.iter().sum();
    let mut w1 = Vec::with_capacity(total * d);
    let mut b1 = Vec::with_capacity(total);
    let mut w2 = vec![0.0; m * total];
    let mut b2 = vec![0.0; m];
    let mut off = 0;
    for (p, &h) in parts.iter().zip(&hidden) {
        if p.layers.len() != 2 {
            return Err(Error::InvalidInput("experts must have one hidden layer".into()));
        }
        w1.extend_from_slice(&p.layers[0].weights);
        b1.extend_from_slice(&p.layers[0].bias);
        for o in 0..m {
            w2[o * total + off..o * total + off + h].copy_from_slice(&p.layers[1].weights[o * h..(o + 1) * h]);
            b2[o] += p.layers[1].bias[o];
        }
        off += h;
    }
    Ok(Component {
        id,
        kind: ComponentKind::PreTrained,
        role: Role::Base,
        input_columns: None,
        layers: vec![
            Layer {
                shape: [total, d],
                weights: w1,
                bias: b1,
                activation: parts[0].layers[0].activation,
                frozen: true,
            },
            Layer {
                shape: [m, total],
                weights: w2,
                bias: b2,
                activation: Activation::Linear,
                frozen: true,
            },
        ],
    })
}

/// Builds the dataset and one pre-trained component per quality level.
/// Component sets failing the independence or no-perfect-component checks
/// are redrawn up to a fixed budget.
pub fn generate_synthetic(spec: &SyntheticTaskSpec) -> Result<SyntheticTask> {
    spec.validate()?;
    let mut r = rng::seeded(spec.seed);
    let x = Matrix::from_vec(spec.n, spec.d, (0..spec.n * spec.d).map(|_| normal(&mut r)).collect())?;
    let parts = teacher_parts(spec, &mut r)?;
    let clean = eval_sum(&parts, &x)?;
    let mut y = clean.clone();
    for v in y.as_mut_slice() {
        *v += spec.noise_sd * normal(&mut r);
    }
    let mean = clean.as_slice().iter().sum::<f64>() / clean.as_slice().len() as f64;
    let std = (clean.as_slice().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / clean.as_slice().len() as f64)
        .sqrt()
        .max(1e-12);

    for attempt in 0..RESAMPLE_BUDGET {
        let mut ar = rng::seeded(rng::derive(spec.seed, 1 + attempt as u64));
        let comps = spec
            .component_quality
            .iter()
            .enumerate()
            .map(|(j, &q)| {
                let p = component_at_quality(&parts, &x, &clean, q * std, &mut ar)?;
                flatten_single(p, format!("f{}", j + 1))
            })
            .collect::<Result<Vec<_>>>()?;
        let outputs = comps
            .iter()
            .map(|c| c.forward(&x).map(Matrix::into_vec))
            .collect::<Result<Vec<_>>>()?;
        let report = linear_solver::check_assumptions(&outputs, y.as_slice())?;
        if report.a1_a2_hold() {
            let dataset = Dataset::with_fraction(x, y, spec.train_fraction)?;
            return Ok(SyntheticTask {
                dataset,
                components: Registry::from_components(comps)?,
                teacher: parts,
            });
        }
        log::debug!("synthetic attempt {attempt} rejected: {report:?}");
    }
    Err(Error::Degenerate(format!(
        "no component set satisfied linear independence and imperfection within {RESAMPLE_BUDGET} draws"
    )))
}
