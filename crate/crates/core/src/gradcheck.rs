//! Central finite differences against every hand-written backward pass.
//!
//! Everything runs in `f64`. Each check reduces its output to a scalar with a
//! fixed random projection, so every output entry contributes to the tested
//! gradient. The error of one entry is
//! `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss;
use crate::model::{self, build_network, Architecture, Layer, Network, NetworkName, ResidualMap};
use crate::ops::{self, BatchNormParams, ConvParams, Mode};
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub seed: u64,
    /// Central difference step.
    pub step: f64,
    /// Denominator floor of the relative error. Gradients that are exactly
    /// zero (a conv bias feeding batch norm) leave only rounding noise of
    /// order `1e-16 * loss / step` in the numeric estimate.
    pub floor: f64,
    /// Side of the square inputs fed to the full networks.
    pub spatial: usize,
    pub batch: usize,
    /// Entries sampled per network check.
    pub samples: usize,
    pub architecture: Architecture,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            step: 1e-5,
            floor: 1e-5,
            spatial: 6,
            batch: 2,
            samples: 48,
            architecture: Architecture::CANONICAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub entries: usize,
    /// Sampled entries sitting on a ReLU kink, left out of `max_rel_error`.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Analytic and numeric value at the worst entry.
    pub worst: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// Every check under `tolerance`, with at most a quarter of its sampled
    /// entries lost to kinks.
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checks.iter().all(|c| {
            c.entries > 0 && c.max_rel_error < tolerance && 4 * c.skipped <= c.entries + c.skipped
        })
    }
}

struct Checker<'a> {
    cfg: &'a GradCheckConfig,
    rng: ChaCha8Rng,
    checks: Vec<CheckResult>,
}

impl Checker<'_> {
    fn random(&mut self, shape: Shape4, lo: f64, hi: f64) -> Tensor4<f64> {
        Tensor4::from_fn(shape, |_, _, _, _| self.rng.random_range(lo..hi))
    }

    fn record(&mut self, name: &str, pairs: impl IntoIterator<Item = (f64, f64)>) {
        let floor = self.cfg.floor;
        let mut result = CheckResult {
            name: name.into(),
            entries: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst: (0.0, 0.0),
        };
        for (a, n) in pairs {
            let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            result.entries += 1;
            // NaN compares false, so force it to the top
            if !(err <= result.max_rel_error) {
                result.max_rel_error = err;
                result.worst = (a, n);
            }
        }
        self.checks.push(result);
    }

    /// Central difference of `f` along entry `i` of `buf`.
    fn numeric(&self, buf: &mut [f64], i: usize, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
        let h = self.cfg.step;
        let orig = buf[i];
        buf[i] = orig + h;
        let up = f(buf);
        buf[i] = orig - h;
        let down = f(buf);
        buf[i] = orig;
        (up - down) / (2.0 * h)
    }

    fn sample(&mut self, len: usize, count: usize) -> Vec<usize> {
        if len <= count {
            return (0..len).collect();
        }
        (0..count).map(|_| self.rng.random_range(0..len)).collect()
    }
}

fn project(y: &Tensor4<f64>, w: &Tensor4<f64>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Runs the whole suite.
pub fn run(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut c = Checker {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        checks: Vec::new(),
    };
    check_conv(&mut c)?;
    check_batchnorm(&mut c)?;
    check_activations(&mut c)?;
    check_losses(&mut c)?;
    check_bcnn(&mut c)?;
    check_scnn(&mut c)?;
    Ok(GradCheckReport { checks: c.checks })
}

fn check_conv(c: &mut Checker) -> Result<()> {
    let x = c.random(Shape4::new(2, 3, 5, 4), -1.0, 1.0);
    let mut p = ConvParams::<f64>::he_normal(3, 4, &mut c.rng);
    for b in &mut p.bias {
        *b = c.rng.random_range(-0.5..0.5);
    }
    let out = p.output_shape(x.shape());
    let w = c.random(out, -1.0, 1.0);
    let g = ops::conv2d_backward(&x, &p, &w, true)?;

    let grad_x = g.input.expect("requested");
    let mut xb = x.data().to_vec();
    let pairs: Vec<_> = (0..xb.len())
        .map(|i| {
            let n = c.numeric(&mut xb, i, &mut |d| {
                let x = Tensor4::from_vec(x.shape(), d.to_vec()).unwrap();
                project(&ops::conv2d_forward(&x, &p).unwrap(), &w)
            });
            (grad_x.data()[i], n)
        })
        .collect();
    c.record("conv input", pairs);

    let mut kb = p.kernel.data().to_vec();
    let pairs: Vec<_> = (0..kb.len())
        .map(|i| {
            let n = c.numeric(&mut kb, i, &mut |d| {
                let q = ConvParams {
                    kernel: Tensor4::from_vec(p.kernel.shape(), d.to_vec()).unwrap(),
                    bias: p.bias.clone(),
                };
                project(&ops::conv2d_forward(&x, &q).unwrap(), &w)
            });
            (g.kernel[i], n)
        })
        .collect();
    c.record("conv kernel", pairs);

    let mut bb = p.bias.clone();
    let pairs: Vec<_> = (0..bb.len())
        .map(|i| {
            let n = c.numeric(&mut bb, i, &mut |d| {
                let q = ConvParams {
                    kernel: p.kernel.clone(),
                    bias: d.to_vec(),
                };
                project(&ops::conv2d_forward(&x, &q).unwrap(), &w)
            });
            (g.bias[i], n)
        })
        .collect();
    c.record("conv bias", pairs);
    Ok(())
}

fn check_batchnorm(c: &mut Checker) -> Result<()> {
    let x = c.random(Shape4::new(3, 4, 3, 2), -2.0, 2.0);
    let mut p = BatchNormParams::<f64>::new(4);
    for v in p.gamma.iter_mut() {
        *v = c.rng.random_range(0.5..1.5);
    }
    for v in p.beta.iter_mut() {
        *v = c.rng.random_range(-0.5..0.5);
    }
    let w = c.random(x.shape(), -1.0, 1.0);
    let (_, cache) = ops::batchnorm_train(&x, &mut p.clone())?;
    let g = ops::batchnorm_backward(&cache, &p, &w)?;
    let eval = |x: &Tensor4<f64>, p: &BatchNormParams<f64>| {
        project(&ops::batchnorm_train(x, &mut p.clone()).unwrap().0, &w)
    };

    let mut xb = x.data().to_vec();
    let pairs: Vec<_> = (0..xb.len())
        .map(|i| {
            let n = c.numeric(&mut xb, i, &mut |d| {
                eval(&Tensor4::from_vec(x.shape(), d.to_vec()).unwrap(), &p)
            });
            (g.input.data()[i], n)
        })
        .collect();
    c.record("batchnorm input", pairs);

    let mut gb = p.gamma.clone();
    let pairs: Vec<_> = (0..gb.len())
        .map(|i| {
            let n = c.numeric(&mut gb, i, &mut |d| {
                let mut q = p.clone();
                q.gamma = d.to_vec();
                eval(&x, &q)
            });
            (g.gamma[i], n)
        })
        .collect();
    c.record("batchnorm gamma", pairs);

    let mut bb = p.beta.clone();
    let pairs: Vec<_> = (0..bb.len())
        .map(|i| {
            let n = c.numeric(&mut bb, i, &mut |d| {
                let mut q = p.clone();
                q.beta = d.to_vec();
                eval(&x, &q)
            });
            (g.beta[i], n)
        })
        .collect();
    c.record("batchnorm beta", pairs);
    Ok(())
}

fn check_activations(c: &mut Checker) -> Result<()> {
    let shape = Shape4::new(2, 2, 3, 3);
    // keep ReLU inputs away from the kink
    let x = Tensor4::from_fn(shape, |_, _, _, _| {
        let m = c.rng.random_range(0.05..2.0);
        if c.rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let w = c.random(shape, -1.0, 1.0);
    let mut xb = x.data().to_vec();
    let from = |d: &[f64]| Tensor4::from_vec(shape, d.to_vec()).unwrap();

    let g = ops::relu_backward(&ops::relu(&x), &w)?;
    let pairs: Vec<_> = (0..xb.len())
        .map(|i| {
            (
                g.data()[i],
                c.numeric(&mut xb, i, &mut |d| project(&ops::relu(&from(d)), &w)),
            )
        })
        .collect();
    c.record("relu", pairs);

    let g = ops::sigmoid_backward(&ops::sigmoid(&x), &w)?;
    let pairs: Vec<_> = (0..xb.len())
        .map(|i| {
            (
                g.data()[i],
                c.numeric(&mut xb, i, &mut |d| project(&ops::sigmoid(&from(d)), &w)),
            )
        })
        .collect();
    c.record("sigmoid", pairs);
    Ok(())
}

fn check_losses(c: &mut Checker) -> Result<()> {
    let shape = Shape4::new(3, 1, 3, 3);
    let from = |d: &[f64]| Tensor4::from_vec(shape, d.to_vec()).unwrap();

    let b = c.random(shape, 0.0, 1.0);
    let a = c.random(shape, 0.0, 1.0);
    let (_, g) = loss::frobenius_loss(&b, &a)?;
    let mut ab = a.data().to_vec();
    let pairs: Vec<_> = (0..ab.len())
        .map(|i| {
            (
                g.data()[i],
                c.numeric(&mut ab, i, &mut |d| {
                    loss::frobenius_loss(&b, &from(d)).unwrap().0
                }),
            )
        })
        .collect();
    c.record("frobenius loss", pairs);

    let t = Tensor4::from_fn(
        shape,
        |_, _, _, _| if c.rng.random_bool(0.4) { 1.0 } else { 0.0 },
    );
    let p = c.random(shape, 0.05, 0.95);
    let (_, g) = loss::bce_loss(&t, &p)?;
    let mut pb = p.data().to_vec();
    let pairs: Vec<_> = (0..pb.len())
        .map(|i| {
            (
                g.data()[i],
                c.numeric(&mut pb, i, &mut |d| loss::bce_loss(&t, &from(d)).unwrap().0),
            )
        })
        .collect();
    c.record("bce loss", pairs);
    Ok(())
}

/// Fresh network in f64 with non-trivial biases and batch-norm affines.
fn network(c: &mut Checker, name: NetworkName) -> Network<f64> {
    let seed = c.rng.random();
    let mut net = build_network(name, c.cfg.architecture, seed).cast::<f64>();
    for layer in net.layers_mut() {
        match layer {
            Layer::Conv(p) => p
                .bias
                .iter_mut()
                .for_each(|b| *b = c.rng.random_range(-0.1..0.1)),
            Layer::BatchNorm(p) => {
                p.gamma
                    .iter_mut()
                    .for_each(|v| *v = c.rng.random_range(0.5..1.5));
                p.beta
                    .iter_mut()
                    .for_each(|v| *v = c.rng.random_range(-0.2..0.2));
            }
            _ => {}
        }
    }
    net
}

/// Signs of every ReLU input, in layer order.
fn relu_pattern(net: &Network<f64>, input: &Tensor4<f64>) -> Vec<bool> {
    let mut pattern = Vec::new();
    let mut x = input.clone();
    for layer in net.layers() {
        x = match layer {
            Layer::Conv(p) => ops::conv2d_forward(&x, p).unwrap(),
            Layer::BatchNorm(p) => ops::batchnorm_train(&x, &mut p.clone()).unwrap().0,
            Layer::Relu => {
                pattern.extend(x.data().iter().map(|&v| v > 0.0));
                ops::relu(&x)
            }
            Layer::Sigmoid => ops::sigmoid(&x),
            Layer::Linear => x,
        };
    }
    pattern
}

/// Central difference through a ReLU network. A step that flips any ReLU
/// straddles a kink where the derivative does not exist; the step is cut
/// tenfold up to twice before the entry is given up as unmeasurable.
fn kink_aware(step: f64, eval: &mut dyn FnMut(f64) -> (f64, Vec<bool>)) -> Option<f64> {
    let (_, base) = eval(0.0);
    let mut h = step;
    for _ in 0..3 {
        let (up, pu) = eval(h);
        let (down, pd) = eval(-h);
        if pu == base && pd == base {
            return Some((up - down) / (2.0 * h));
        }
        h /= 10.0;
    }
    None
}

/// Checks sampled parameter and input entries of `objective(net, x)`.
/// `analytic` holds the input gradient and the parameter gradients.
fn check_network(
    c: &mut Checker,
    label: &str,
    net: &mut Network<f64>,
    x: &Tensor4<f64>,
    objective: &dyn Fn(&Network<f64>, &Tensor4<f64>) -> f64,
    analytic: (Tensor4<f64>, Vec<Vec<f64>>),
) {
    let (grad_x, grads) = analytic;
    let step = c.cfg.step;
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for _ in 0..c.cfg.samples {
        let t = c.rng.random_range(0..grads.len());
        let i = c.rng.random_range(0..grads[t].len());
        let orig = net.parameters()[t][i];
        let n = kink_aware(step, &mut |d| {
            net.parameters_mut()[t][i] = orig + d;
            let out = (objective(net, x), relu_pattern(net, x));
            net.parameters_mut()[t][i] = orig;
            out
        });
        match n {
            Some(n) => pairs.push((grads[t][i], n)),
            None => skipped += 1,
        }
    }
    c.record(&alloc::format!("{label} parameters"), pairs);
    c.checks.last_mut().expect("just recorded").skipped = skipped;

    let mut pairs = Vec::new();
    let mut skipped = 0;
    let mut xb = x.clone();
    for i in c.sample(x.data().len(), c.cfg.samples) {
        let orig = x.data()[i];
        let n = kink_aware(step, &mut |d| {
            xb.data_mut()[i] = orig + d;
            let out = (objective(net, &xb), relu_pattern(net, &xb));
            xb.data_mut()[i] = orig;
            out
        });
        match n {
            Some(n) => pairs.push((grad_x.data()[i], n)),
            None => skipped += 1,
        }
    }
    c.record(&alloc::format!("{label} input"), pairs);
    c.checks.last_mut().expect("just recorded").skipped = skipped;
}

/// Background objective: Frobenius loss of `sigmoid(f - BCNN(f))`.
fn check_bcnn(c: &mut Checker) -> Result<()> {
    let s = c.cfg.spatial;
    let shape = Shape4::new(c.cfg.batch, 1, s, s);
    let f = c.random(shape, -0.5, 0.5);
    let b = c.random(shape, 0.0, 1.0);
    let mut net = network(c, NetworkName::Bcnn);
    let objective = |net: &Network<f64>, f: &Tensor4<f64>| {
        let a = model::approximated_background(f, net, Mode::Train).unwrap();
        loss::frobenius_loss(&b, &a).unwrap().0
    };
    let (r, tape) = net.clone().forward_tape(&f, Mode::Train)?;
    let a = f.zip_map(&r, "bcnn check", |x, r| ops::sigmoid_scalar(x - r))?;
    let (_, grad_a) = loss::frobenius_loss(&b, &a)?;
    let grad_z = grad_a.zip_map(&a, "bcnn check", |g, a| g * a * (1.0 - a))?;
    let grad_r = grad_z.map(|g| -g);
    let (gx, grads) = net.backward(tape, grad_r, true)?;
    // f also enters directly through sigmoid(f - r)
    let gx = gx
        .expect("requested")
        .zip_map(&grad_z, "bcnn check", |a, b| a + b)?;
    check_network(c, "bcnn composition", &mut net, &f, &objective, (gx, grads));
    Ok(())
}

/// Segmentation objective: BCE of `SCNN([f, r])` with a fixed residual map.
fn check_scnn(c: &mut Checker) -> Result<()> {
    let s = c.cfg.spatial;
    let shape = Shape4::new(c.cfg.batch, 1, s, s);
    let f = c.random(shape, -0.5, 0.5);
    let bcnn = network(c, NetworkName::Bcnn);
    let r: ResidualMap<f64> = model::bcnn_forward(&f, &bcnn, Mode::Infer)?;
    let input = model::cascade_input(&f, &r)?;
    let g = Tensor4::from_fn(
        shape,
        |_, _, _, _| if c.rng.random_bool(0.3) { 1.0 } else { 0.0 },
    );
    let mut net = network(c, NetworkName::Scnn);
    let objective = |net: &Network<f64>, x: &Tensor4<f64>| {
        loss::bce_loss(&g, &net.forward(x, Mode::Train).unwrap())
            .unwrap()
            .0
    };
    let (p, tape) = net.clone().forward_tape(&input, Mode::Train)?;
    let (_, grad_p) = loss::bce_loss(&g, &p)?;
    let (gx, grads) = net.backward(tape, grad_p, true)?;
    check_network(
        c,
        "scnn composition",
        &mut net,
        &input,
        &objective,
        (gx.expect("requested"), grads),
    );
    Ok(())
}
