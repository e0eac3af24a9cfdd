use super::{linalg, BackendKind, GeometryBackend, HermitianFormField, PotentialField, ScalarField};
use crate::error::{JflowError, Result};

/// Discrete complex Hessian of an arbitrary smooth grid function.
///
/// Torus: `(1/4) ∂²/∂x_i∂x_j` with second-order periodic central
/// differences. Sphere: `d²/ds²` in the conservative half-point form, whose
/// pole cells assume the asymptotics of smooth invariant functions.
pub(crate) fn hessian_of_values(values: &[f64], b: &GeometryBackend) -> HermitianFormField {
    match b.kind() {
        BackendKind::Torus => torus_hessian(values, b),
        BackendKind::Sphere => HermitianFormField::from_density(sphere_second_derivative(values, b)),
    }
}

fn torus_hessian(values: &[f64], b: &GeometryBackend) -> HermitianFormField {
    let n = b.dim();
    let h = b.spacing();
    let k = linalg::packed_len(n);
    let mut data = vec![0.0; values.len() * k];
    for p in 0..values.len() {
        let block = &mut data[p * k..(p + 1) * k];
        for i in 0..n {
            let fwd = values[b.shifted(p, i, 1)];
            let bwd = values[b.shifted(p, i, -1)];
            block[linalg::packed_index(n, i, i)] = 0.25 * (fwd - 2.0 * values[p] + bwd) / (h[i] * h[i]);
            for j in i + 1..n {
                let pp = b.shifted(b.shifted(p, i, 1), j, 1);
                let pm = b.shifted(b.shifted(p, i, 1), j, -1);
                let mp = b.shifted(b.shifted(p, i, -1), j, 1);
                let mm = b.shifted(b.shifted(p, i, -1), j, -1);
                let mixed = (values[pp] - values[pm] - values[mp] + values[mm]) / (4.0 * h[i] * h[j]);
                block[linalg::packed_index(n, i, j)] = 0.25 * mixed;
            }
        }
    }
    HermitianFormField::from_packed(n, data)
}

/// Differences on the `N + 1` sphere half points, with zero pole ghosts.
pub(crate) fn sphere_half_differences(values: &[f64], ds: f64) -> Vec<f64> {
    let n = values.len();
    let mut a = vec![0.0; n + 1];
    for k in 1..n {
        a[k] = (values[k] - values[k - 1]) / ds;
    }
    a
}

fn sphere_second_derivative(values: &[f64], b: &GeometryBackend) -> Vec<f64> {
    let chart = b.sphere.as_ref().expect("sphere chart");
    let a = sphere_half_differences(values, chart.ds);
    (0..values.len()).map(|j| (a[j + 1] - a[j]) / chart.cell[j]).collect()
}

/// Reduced action of `X` on a grid function (`0` on the torus, `d/ds` on the sphere).
pub fn x_derivative(values: &[f64], b: &GeometryBackend) -> Vec<f64> {
    match b.kind() {
        BackendKind::Torus => vec![0.0; values.len()],
        BackendKind::Sphere => {
            let chart = b.sphere.as_ref().expect("sphere chart");
            let a = sphere_half_differences(values, chart.ds);
            (0..values.len()).map(|j| 0.5 * (a[j] + a[j + 1])).collect()
        }
    }
}

/// The increment `(i/2)∂∂̄φ`.
pub fn complex_hessian(phi: &PotentialField, b: &GeometryBackend) -> Result<HermitianFormField> {
    b.check_len(phi.len())?;
    Ok(hessian_of_values(phi.values(), b))
}

/// `χ_φ = χ0 + (i/2)∂∂̄φ`, flagged `kahler_metric` when its minimum
/// eigenvalue exceeds the backend's positivity floor.
pub fn build_metric(phi: &PotentialField, b: &GeometryBackend) -> Result<HermitianFormField> {
    let hess = complex_hessian(phi, b)?;
    Ok(b.chi0().add(&hess).flag_positivity(b.positivity_floor()))
}

/// `build_metric`, failing with `NotKahler` when positivity is lost.
pub fn kahler_metric(phi: &PotentialField, b: &GeometryBackend) -> Result<HermitianFormField> {
    let chi = build_metric(phi, b)?;
    if !chi.is_kahler_metric() {
        chi.require_kahler(b.positivity_floor())?;
    }
    Ok(chi)
}

fn ensure_kahler(chi: &HermitianFormField) -> Result<()> {
    if chi.is_kahler_metric() {
        Ok(())
    } else {
        chi.require_kahler(0.0)
    }
}

/// `Λ_χ ω = χ^{i\bar j} ω_{i\bar j}` pointwise.
pub fn trace_with(chi: &HermitianFormField, omega: &HermitianFormField) -> Result<ScalarField> {
    if chi.len() != omega.len() {
        return Err(JflowError::ShapeMismatch { expected: chi.len(), got: omega.len() });
    }
    ensure_kahler(chi)?;
    let n = chi.dim();
    Ok(ScalarField::new((0..chi.len()).map(|p| linalg::relative_trace(n, chi.at(p), omega.at(p))).collect()))
}

/// `θ_X(χ_φ) = θ_X(χ0) + X(φ)`.
pub fn theta_of(phi: &PotentialField, b: &GeometryBackend) -> Result<ScalarField> {
    b.check_len(phi.len())?;
    let xphi = x_derivative(phi.values(), b);
    Ok(ScalarField::new(b.theta0().values.iter().zip(&xphi).map(|(t, x)| t + x).collect()))
}

/// `|X|^2_χ` pointwise (`χ_{w\bar w}` on the sphere, zero on the torus).
pub fn field_norm_squared(chi: &HermitianFormField, b: &GeometryBackend) -> ScalarField {
    match b.kind() {
        BackendKind::Torus => ScalarField::constant(chi.len(), 0.0),
        BackendKind::Sphere => ScalarField::new(chi.packed().to_vec()),
    }
}

/// `Ric(χ) = -(i/2)∂∂̄ log det χ`.
///
/// On the sphere `log det χ` is not a function on the manifold, so the form
/// is assembled as `Ric(χ0) - (i/2)∂∂̄ log(det χ / det χ0)` with the
/// Fubini–Study value `Ric(χ0) = 2 χ0`.
pub fn ricci_form(chi: &HermitianFormField, b: &GeometryBackend) -> Result<HermitianFormField> {
    b.check_len(chi.len())?;
    ensure_kahler(chi)?;
    let det = chi.determinants();
    match b.kind() {
        BackendKind::Torus => {
            let log_det: Vec<f64> = det.iter().map(|d| d.ln()).collect();
            Ok(hessian_of_values(&log_det, b).scaled(-1.0))
        }
        BackendKind::Sphere => {
            let det0 = b.chi0().determinants();
            let log_ratio: Vec<f64> = det.iter().zip(&det0).map(|(d, d0)| (d / d0).ln()).collect();
            Ok(b.chi0().scaled(2.0).axpy(-1.0, &hessian_of_values(&log_ratio, b)))
        }
    }
}

/// `ω0 = -Ric(χ0)`, the reference form of the K-energy.
pub fn reference_ricci_potential_form(b: &GeometryBackend) -> Result<HermitianFormField> {
    Ok(ricci_form(b.chi0(), b)?.scaled(-1.0))
}

/// Scalar curvature `R(χ) = Λ_χ Ric(χ)` in the convention of the
/// variational formula of the modified K-energy.
pub fn scalar_curvature(chi: &HermitianFormField, b: &GeometryBackend) -> Result<ScalarField> {
    let ric = ricci_form(chi, b)?;
    trace_with(chi, &ric)
}

/// `∫ f χ^n / n!`.
pub fn integrate(f: &ScalarField, chi: &HermitianFormField, b: &GeometryBackend) -> f64 {
    let n = chi.dim();
    f.values.iter().zip(b.weights()).enumerate().map(|(p, (v, w))| v * w * linalg::det(n, chi.at(p))).sum()
}

/// `∫ χ^n / n!`.
pub fn total_volume(chi: &HermitianFormField, b: &GeometryBackend) -> f64 {
    chi.determinants().iter().zip(b.weights()).map(|(d, w)| d * w).sum()
}

/// `∫ A^{i\bar j} ∂_i σ ∂_{\bar j} σ` against the bare quadrature weights.
///
/// `tensor` holds a contravariant symmetric tensor per point, already
/// multiplied by whatever volume density the caller wants.
pub fn gradient_energy(sigma: &[f64], tensor: &HermitianFormField, b: &GeometryBackend) -> f64 {
    match b.kind() {
        BackendKind::Torus => {
            let n = b.dim();
            let h = b.spacing();
            let mut grad = vec![0.0; n];
            let mut total = 0.0;
            for p in 0..sigma.len() {
                for (i, g) in grad.iter_mut().enumerate() {
                    *g = (sigma[b.shifted(p, i, 1)] - sigma[b.shifted(p, i, -1)]) / (2.0 * h[i]);
                }
                total += 0.25 * linalg::quadratic_form(n, tensor.at(p), &grad) * b.weights()[p];
            }
            total
        }
        BackendKind::Sphere => {
            let ds = b.spacing()[0];
            let a = sphere_half_differences(sigma, ds);
            let pi = std::f64::consts::PI;
            (1..sigma.len())
                .map(|k| {
                    let coeff = 0.5 * (tensor.at(k - 1)[0] + tensor.at(k)[0]);
                    pi * ds * coeff * a[k] * a[k]
                })
                .sum()
        }
    }
}
