//! Finite-difference gradient checks over every differentiable op and the
//! composed training losses.

use crate::dkg::{dkg_forward, DkgParams, KernelMode};
use crate::error::Result;
use crate::heads::{cls_loss, depth_loss};
use crate::label::Class;
use crate::numcore::{grad_check, ParamStore, Rng, Tape, Tensor, Var};
use crate::style::{reassemble_on_tape, StyleTargets};
use crate::whitening::{covariance_on_tape, WhiteningLoss, WhiteningMode};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckRecord {
    pub name: &'static str,
    pub seed: u64,
    pub max_rel_err: f64,
}

fn normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).expect("non-empty shape")
}

/// Entries bounded away from zero so kinks of `abs`/`relu` are not probed.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    normal(rng, shape).map(|v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v })
}

/// `Σ out ⊙ R` for a fixed random `R`, turning any output into a scalar
/// whose gradient exercises every element.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = Rng::new(seed).split(99);
    let r = normal(&mut rng, tape.shape(out));
    let r = tape.constant(r);
    let prod = tape.mul(out, r)?;
    Ok(tape.sum(prod))
}

type Check = (&'static str, Box<dyn Fn(u64) -> Result<f64>>);

fn checks() -> Vec<Check> {
    let mut v: Vec<Check> = Vec::new();
    macro_rules! unary {
        ($name:expr, $shape:expr, $gen:ident, |$t:ident, $x:ident| $body:expr) => {
            v.push((
                $name,
                Box::new(move |seed| {
                    let mut rng = Rng::new(seed);
                    let x = $gen(&mut rng, &$shape);
                    grad_check(
                        |$t: &mut Tape, $x: Var| {
                            let out: Var = $body?;
                            project($t, out, seed)
                        },
                        &x,
                        None,
                    )
                }),
            ));
        };
    }
    unary!("add", [2, 3], normal, |t, x| {
        let c = t.constant(Tensor::full(&[2, 3], 0.7));
        t.add(x, c)
    });
    unary!("sub", [2, 3], normal, |t, x| {
        let c = t.constant(Tensor::full(&[2, 3], 0.3));
        t.sub(c, x)
    });
    unary!("mul", [2, 3], normal, |t, x| t.mul(x, x));
    unary!("scale", [4], normal, |t, x| Ok::<_, crate::Error>(t.scale(x, -1.7)));
    unary!("add_scalar", [4], normal, |t, x| Ok::<_, crate::Error>(t.add_scalar(x, 2.5)));
    unary!("abs", [5], away_from_zero, |t, x| Ok::<_, crate::Error>(t.abs(x)));
    unary!("relu", [5], away_from_zero, |t, x| Ok::<_, crate::Error>(t.relu(x)));
    unary!("sigmoid", [5], normal, |t, x| Ok::<_, crate::Error>(t.sigmoid(x)));
    unary!("sum", [2, 3], normal, |t, x| {
        let s = t.sum(x);
        Ok::<_, crate::Error>(t.mul(s, s)?)
    });
    unary!("mean", [2, 3], normal, |t, x| {
        let s = t.mean(x);
        Ok::<_, crate::Error>(t.mul(s, s)?)
    });
    unary!("reshape", [2, 3], normal, |t, x| t.reshape(x, &[3, 2]));
    unary!("matmul_left", [3, 4], normal, |t, x| {
        let b = t.constant(normal(&mut Rng::new(7), &[4, 2]));
        t.matmul(x, b)
    });
    unary!("matmul_right", [4, 2], normal, |t, x| {
        let a = t.constant(normal(&mut Rng::new(8), &[3, 4]));
        t.matmul(a, x)
    });
    unary!("linear_input", [2, 5], normal, |t, x| {
        let w = t.constant(normal(&mut Rng::new(9), &[3, 5]));
        let b = t.constant(normal(&mut Rng::new(10), &[3]));
        t.linear(x, w, b)
    });
    unary!("linear_weight", [3, 5], normal, |t, w| {
        let x = t.constant(normal(&mut Rng::new(11), &[2, 5]));
        let b = t.constant(normal(&mut Rng::new(12), &[3]));
        t.linear(x, w, b)
    });
    unary!("conv2d_input", [2, 2, 5, 5], normal, |t, x| {
        let w = t.constant(normal(&mut Rng::new(13), &[3, 2, 3, 3]));
        let b = t.constant(normal(&mut Rng::new(14), &[3]));
        t.conv2d(x, w, b, 1, 1)
    });
    unary!("conv2d_weight", [3, 2, 3, 3], normal, |t, w| {
        let x = t.constant(normal(&mut Rng::new(15), &[2, 2, 5, 5]));
        let b = t.constant(normal(&mut Rng::new(16), &[3]));
        t.conv2d(x, w, b, 1, 1)
    });
    unary!("conv2d_bias", [3], normal, |t, b| {
        let x = t.constant(normal(&mut Rng::new(17), &[2, 2, 5, 5]));
        let w = t.constant(normal(&mut Rng::new(18), &[3, 2, 3, 3]));
        t.conv2d(x, w, b, 1, 1)
    });
    unary!("conv2d_stride2", [1, 2, 6, 6], normal, |t, x| {
        let w = t.constant(normal(&mut Rng::new(19), &[2, 2, 3, 3]));
        let b = t.constant(normal(&mut Rng::new(20), &[2]));
        t.conv2d(x, w, b, 2, 1)
    });
    unary!("depthwise_input", [2, 3, 4, 4], normal, |t, x| {
        let k = t.constant(normal(&mut Rng::new(21), &[2, 3, 3, 3]));
        t.depthwise_conv(x, k, 1)
    });
    unary!("depthwise_kernels", [2, 3, 3, 3], normal, |t, k| {
        let x = t.constant(normal(&mut Rng::new(22), &[2, 3, 4, 4]));
        t.depthwise_conv(x, k, 1)
    });
    unary!("instance_norm", [2, 2, 3, 3], normal, |t, x| t.instance_norm(x, 1e-5));
    unary!("global_avg_pool", [2, 3, 2, 2], normal, |t, x| t.global_avg_pool(x));
    unary!("concat_channels", [1, 2, 2, 2], normal, |t, x| {
        let c = t.constant(normal(&mut Rng::new(23), &[1, 3, 2, 2]));
        t.concat_channels(c, x)
    });
    unary!("slice_channels", [1, 4, 2, 2], normal, |t, x| t.slice_channels(x, 1, 2));
    unary!("channel_affine_input", [2, 3, 2, 2], normal, |t, x| {
        let s = t.constant(normal(&mut Rng::new(24), &[2, 3]));
        let b = t.constant(normal(&mut Rng::new(25), &[2, 3]));
        t.channel_affine(x, s, b)
    });
    unary!("channel_affine_scale", [2, 3], normal, |t, s| {
        let x = t.constant(normal(&mut Rng::new(26), &[2, 3, 2, 2]));
        let b = t.constant(normal(&mut Rng::new(27), &[2, 3]));
        t.channel_affine(x, s, b)
    });
    unary!("channel_affine_shift", [2, 3], normal, |t, b| {
        let x = t.constant(normal(&mut Rng::new(28), &[2, 3, 2, 2]));
        let s = t.constant(normal(&mut Rng::new(29), &[2, 3]));
        t.channel_affine(x, s, b)
    });
    unary!("gram", [2, 3, 2, 2], normal, |t, x| t.gram(x));
    unary!("bce_with_logits", [4], normal, |t, x| t.bce_with_logits(x, &[1.0, 0.0, 1.0, 0.0]));
    unary!("covariance", [2, 3, 3, 3], normal, |t, x| covariance_on_tape(t, x));
    unary!("style_reassembly", [2, 3, 3, 3], normal, |t, x| {
        let mut r = Rng::new(30);
        let targets = StyleTargets {
            mu: normal(&mut r, &[2, 3]),
            sigma: normal(&mut r, &[2, 3]).map(|v| v.abs() + 0.5),
        };
        reassemble_on_tape(t, x, &targets, 1e-5)
    });
    unary!("dkg_block", [2, 4, 4, 4], normal, |t, x| {
        let mut r = Rng::new(31);
        let mut store = ParamStore::new();
        let p = DkgParams::new(&mut store, "dkg", 4, &mut r)?;
        *store.get_mut(p.gen_w) = normal(&mut r, store.get(p.gen_w).shape()).map(|v| 0.3 * v);
        let bound = store.bind_frozen(t);
        dkg_forward(t, x, &p, &bound, KernelMode::Both)
    });

    v.push((
        "loss_cls",
        Box::new(|seed| {
            let mut rng = Rng::new(seed);
            let x = normal(&mut rng, &[2, 4]);
            let labels = [Class::Real, Class::Spoof, Class::Spoof, Class::Real];
            grad_check(
                |t, x| {
                    let org = t.slice_channels(x, 0, 1)?;
                    let org = t.reshape(org, &[4])?;
                    let aug = t.slice_channels(x, 1, 1)?;
                    let aug = t.reshape(aug, &[4])?;
                    cls_loss(t, &[org, aug], &labels)
                },
                &x.reshape(&[1, 2, 4, 1])?,
                None,
            )
        }),
    ));
    v.push((
        "loss_dep",
        Box::new(|seed| {
            let mut rng = Rng::new(seed);
            let x = normal(&mut rng, &[2, 1, 3, 3]);
            let y = normal(&mut rng, &[2, 1, 3, 3]).map(f64::abs);
            grad_check(
                |t, x| {
                    let doubled = t.scale(x, 0.5);
                    depth_loss(t, &[x, doubled], &y)
                },
                &x,
                None,
            )
        }),
    ));
    v.push((
        "loss_aiaw",
        Box::new(|seed| {
            let mut rng = Rng::new(seed);
            // 4 channels give 6 upper entries: masks of 3 (real) and 1 (spoof).
            let x = normal(&mut rng, &[4, 8, 3, 3]);
            let labels = [Class::Real, Class::Spoof, Class::Real, Class::Spoof];
            let loss = WhiteningLoss::new(WhiteningMode::Asymmetric, 0.5, 0.3)?;
            grad_check(
                |t, x| {
                    let org = t.slice_channels(x, 0, 4)?;
                    let aug = t.slice_channels(x, 4, 4)?;
                    let co = covariance_on_tape(t, org)?;
                    let ca = covariance_on_tape(t, aug)?;
                    Ok(loss.evaluate(t, co, Some(ca), &labels)?.expect("loss enabled").loss)
                },
                &x,
                None,
            )
        }),
    ));
    v
}

pub fn check_names() -> Vec<&'static str> {
    checks().into_iter().map(|(n, _)| n).collect()
}

/// Runs every check for every seed.
pub fn grad_check_suite(seeds: &[u64]) -> Result<Vec<GradCheckRecord>> {
    let mut out = Vec::new();
    for (name, f) in checks() {
        for &seed in seeds {
            out.push(GradCheckRecord {
                name,
                seed,
                max_rel_err: f(seed)?,
            });
        }
    }
    Ok(out)
}
