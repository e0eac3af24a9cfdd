//! Named potential expressions and random Kähler potentials.
//!
//! Expressions are sums of terms separated by `+`:
//!
//! | term                   | backend | value                              |
//! |------------------------|---------|------------------------------------|
//! | `zero`                 | any     | `0`                                |
//! | `const(c)`             | any     | `c`                                |
//! | `sine(a, k[, axis])`   | torus   | `a sin(2πk x_axis)`                |
//! | `cosine(a, k[, axis])` | torus   | `a cos(2πk x_axis)`                |
//! | `mixed(a, k1, k2)`     | torus   | `a sin(2πk1 x_0) sin(2πk2 x_1)`    |
//! | `moment_cos(a, k)`     | sphere  | `a cos(kπ m)`                      |
//! | `moment_poly(a, p)`    | sphere  | `a m^p`                            |
//!
//! `m` is the Fubini–Study moment coordinate; functions of `m` are smooth
//! invariant functions on the sphere.

use rand::Rng;
use std::f64::consts::PI;

use super::{build_metric, BackendKind, GeometryBackend, PotentialField};
use crate::error::{JflowError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    Zero,
    Const(f64),
    Sine { amplitude: f64, mode: f64, axis: usize },
    Cosine { amplitude: f64, mode: f64, axis: usize },
    Mixed { amplitude: f64, mode0: f64, mode1: f64 },
    MomentCos { amplitude: f64, mode: f64 },
    MomentPoly { amplitude: f64, power: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialExpr {
    pub terms: Vec<Term>,
}

impl std::fmt::Display for PotentialExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|term| match *term {
                Term::Zero => "zero".to_string(),
                Term::Const(c) => format!("const({c:?})"),
                Term::Sine { amplitude, mode, axis } => format!("sine({amplitude:?}, {mode:?}, {axis})"),
                Term::Cosine { amplitude, mode, axis } => format!("cosine({amplitude:?}, {mode:?}, {axis})"),
                Term::Mixed { amplitude, mode0, mode1 } => format!("mixed({amplitude:?}, {mode0:?}, {mode1:?})"),
                Term::MomentCos { amplitude, mode } => format!("moment_cos({amplitude:?}, {mode:?})"),
                Term::MomentPoly { amplitude, power } => format!("moment_poly({amplitude:?}, {power:?})"),
            })
            .collect();
        f.write_str(&parts.join(" + "))
    }
}

impl std::str::FromStr for PotentialExpr {
    type Err = JflowError;

    fn from_str(src: &str) -> Result<Self> {
        let mut terms = Vec::new();
        let mut depth = 0i32;
        let mut start = 0;
        let bytes = src.as_bytes();
        for (i, &c) in bytes.iter().enumerate() {
            match c {
                b'(' => depth += 1,
                b')' => depth -= 1,
                b'+' if depth == 0 && i > start => {
                    terms.push(parse_term(&src[start..i])?);
                    start = i + 1;
                }
                _ => {}
            }
        }
        if depth != 0 {
            return Err(JflowError::Config(format!("unbalanced parentheses in potential `{src}`")));
        }
        terms.push(parse_term(&src[start..])?);
        Ok(Self { terms })
    }
}

fn parse_term(raw: &str) -> Result<Term> {
    let t = raw.trim();
    let bad = || JflowError::Config(format!("cannot parse potential term `{t}`"));
    if t == "zero" || t == "0" {
        return Ok(Term::Zero);
    }
    let open = t.find('(').ok_or_else(bad)?;
    if !t.ends_with(')') {
        return Err(bad());
    }
    let name = t[..open].trim();
    let args: Vec<f64> = t[open + 1..t.len() - 1]
        .split(',')
        .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let arity = |lo: usize, hi: usize| if (lo..=hi).contains(&args.len()) { Ok(()) } else { Err(bad()) };
    let axis = |i: usize| args.get(i).map(|a| *a as usize).unwrap_or(0);
    Ok(match name {
        "const" => {
            arity(1, 1)?;
            Term::Const(args[0])
        }
        "sine" => {
            arity(2, 3)?;
            Term::Sine { amplitude: args[0], mode: args[1], axis: axis(2) }
        }
        "cosine" => {
            arity(2, 3)?;
            Term::Cosine { amplitude: args[0], mode: args[1], axis: axis(2) }
        }
        "mixed" => {
            arity(3, 3)?;
            Term::Mixed { amplitude: args[0], mode0: args[1], mode1: args[2] }
        }
        "moment_cos" => {
            arity(2, 2)?;
            Term::MomentCos { amplitude: args[0], mode: args[1] }
        }
        "moment_poly" => {
            arity(2, 2)?;
            Term::MomentPoly { amplitude: args[0], power: args[1] }
        }
        _ => return Err(bad()),
    })
}

impl PotentialExpr {
    pub fn zero() -> Self {
        Self { terms: vec![Term::Zero] }
    }

    /// Multiplies every term by `t`.
    pub fn scaled(&self, t: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|term| match *term {
                Term::Zero => Term::Zero,
                Term::Const(c) => Term::Const(t * c),
                Term::Sine { amplitude, mode, axis } => Term::Sine { amplitude: t * amplitude, mode, axis },
                Term::Cosine { amplitude, mode, axis } => Term::Cosine { amplitude: t * amplitude, mode, axis },
                Term::Mixed { amplitude, mode0, mode1 } => Term::Mixed { amplitude: t * amplitude, mode0, mode1 },
                Term::MomentCos { amplitude, mode } => Term::MomentCos { amplitude: t * amplitude, mode },
                Term::MomentPoly { amplitude, power } => Term::MomentPoly { amplitude: t * amplitude, power },
            })
            .collect();
        Self { terms }
    }

    /// Sample the expression on the backend grid.
    pub fn sample(&self, b: &GeometryBackend) -> Result<PotentialField> {
        let mut values = vec![0.0; b.len()];
        for term in &self.terms {
            let torus_only = |axis: usize| {
                if b.kind() != BackendKind::Torus {
                    Err(JflowError::Config(format!("term {term:?} requires the torus backend")))
                } else if axis >= b.dim() {
                    Err(JflowError::Config(format!("axis {axis} out of range for n = {}", b.dim())))
                } else {
                    Ok(())
                }
            };
            let moment =
                || b.moment().ok_or_else(|| JflowError::Config(format!("term {term:?} requires the sphere backend")));
            match *term {
                Term::Zero => {}
                Term::Const(c) => values.iter_mut().for_each(|v| *v += c),
                Term::Sine { amplitude, mode, axis } => {
                    torus_only(axis)?;
                    for (p, v) in values.iter_mut().enumerate() {
                        *v += amplitude * (2.0 * PI * mode * b.point(p)[axis]).sin();
                    }
                }
                Term::Cosine { amplitude, mode, axis } => {
                    torus_only(axis)?;
                    for (p, v) in values.iter_mut().enumerate() {
                        *v += amplitude * (2.0 * PI * mode * b.point(p)[axis]).cos();
                    }
                }
                Term::Mixed { amplitude, mode0, mode1 } => {
                    torus_only(1)?;
                    for (p, v) in values.iter_mut().enumerate() {
                        let x = b.point(p);
                        *v += amplitude * (2.0 * PI * mode0 * x[0]).sin() * (2.0 * PI * mode1 * x[1]).sin();
                    }
                }
                Term::MomentCos { amplitude, mode } => {
                    for (v, m) in values.iter_mut().zip(moment()?) {
                        *v += amplitude * (mode * PI * m).cos();
                    }
                }
                Term::MomentPoly { amplitude, power } => {
                    for (v, m) in values.iter_mut().zip(moment()?) {
                        *v += amplitude * m.powf(power);
                    }
                }
            }
        }
        PotentialField::new(values)
    }
}

/// Random smooth invariant potential with `modes` low-frequency components,
/// scaled down until `χ_φ ≥ (1 - max_deformation) χ0` relative to the
/// reference metric. Returns a MeanZero-normalized Kähler potential.
pub fn random_kahler_potential<R: Rng>(
    b: &GeometryBackend,
    rng: &mut R,
    amplitude: f64,
    modes: usize,
    max_deformation: f64,
) -> Result<PotentialField> {
    let mut values = vec![0.0; b.len()];
    match b.kind() {
        BackendKind::Torus => {
            for _ in 0..modes.max(1) {
                let k: Vec<f64> = (0..b.dim()).map(|_| rng.gen_range(0..=2) as f64).collect();
                let k = if k.iter().all(|&v| v == 0.0) { vec![1.0; b.dim()] } else { k };
                let phase = rng.gen_range(0.0..2.0 * PI);
                let c = rng.gen_range(-1.0..1.0);
                for (p, v) in values.iter_mut().enumerate() {
                    let x = b.point(p);
                    let arg: f64 = k.iter().zip(&x).map(|(k, x)| 2.0 * PI * k * x).sum();
                    *v += c * (arg + phase).sin();
                }
            }
        }
        BackendKind::Sphere => {
            let expr = random_sphere_expr(b, rng, amplitude, modes, max_deformation)?;
            return Ok(expr.sample(b)?.renormalized(&b.reference_measure()));
        }
    }
    let mut phi = PotentialField::new(values)?.scaled(amplitude);
    for _ in 0..200 {
        if min_relative_to_reference(&phi, b)? >= 1.0 - max_deformation {
            return Ok(phi.renormalized(&b.reference_measure()));
        }
        phi = phi.scaled(0.8);
    }
    Err(JflowError::Config("could not generate a Kähler potential".into()))
}

fn min_relative_to_reference(phi: &PotentialField, b: &GeometryBackend) -> Result<f64> {
    let chi = build_metric(phi, b)?;
    Ok((0..chi.len())
        .map(|p| {
            super::linalg::generalized_eigenvalues(b.dim(), chi.at(p), b.chi0().at(p)).map_or(f64::NAN, |ev| ev[0])
        })
        .fold(f64::INFINITY, f64::min))
}

/// Random analytic invariant sphere potential `Σ c_k cos(kπm)/k`, scaled
/// down until `χ_φ ≥ (1 - max_deformation) χ0` on the grid of `b`. The
/// expression can be resampled on other grids.
pub fn random_sphere_expr<R: Rng>(
    b: &GeometryBackend,
    rng: &mut R,
    amplitude: f64,
    modes: usize,
    max_deformation: f64,
) -> Result<PotentialExpr> {
    if b.kind() != BackendKind::Sphere {
        return Err(JflowError::UnsupportedBackend("torus"));
    }
    let terms = (1..=modes.max(1))
        .map(|k| Term::MomentCos { amplitude: amplitude * rng.gen_range(-1.0..1.0) / k as f64, mode: k as f64 })
        .collect();
    let mut expr = PotentialExpr { terms };
    for _ in 0..200 {
        if min_relative_to_reference(&expr.sample(b)?, b)? >= 1.0 - max_deformation {
            return Ok(expr);
        }
        expr = expr.scaled(0.8);
    }
    Err(JflowError::Config("could not generate a Kähler potential".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn parses_sums() {
        let e: PotentialExpr = "sine(0.1, 1) + const(2) + mixed(0.01,1,2)".parse().unwrap();
        assert_eq!(e.terms.len(), 3);
        assert_eq!(e.terms[1], Term::Const(2.0));
        assert!("sine(0.1".parse::<PotentialExpr>().is_err());
        assert!("bogus(1)".parse::<PotentialExpr>().is_err());
        assert!("sine()".parse::<PotentialExpr>().is_err());
    }

    #[test]
    fn display_round_trips() {
        let e: PotentialExpr = "sine(0.1, 1) + moment_cos(-0.25, 3) + const(2)".parse().unwrap();
        assert_eq!(e.to_string().parse::<PotentialExpr>().unwrap(), e);
    }

    #[test]
    fn backend_specific_terms_checked() {
        let s = GeometryBackend::sphere(33, 8.0).unwrap();
        let t = GeometryBackend::torus(1, 16).unwrap();
        assert!("sine(0.1,1)".parse::<PotentialExpr>().unwrap().sample(&s).is_err());
        assert!("moment_cos(0.1,1)".parse::<PotentialExpr>().unwrap().sample(&t).is_err());
        assert!("sine(0.1,1,1)".parse::<PotentialExpr>().unwrap().sample(&t).is_err());
    }

    #[test]
    fn random_potentials_are_kahler() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for b in [GeometryBackend::torus(2, 16).unwrap(), GeometryBackend::sphere(129, 12.0).unwrap()] {
            for _ in 0..5 {
                let phi = random_kahler_potential(&b, &mut rng, 0.2, 3, 0.7).unwrap();
                assert!(build_metric(&phi, &b).unwrap().is_kahler_metric());
            }
        }
    }
}
