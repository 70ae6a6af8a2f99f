/*
Copyright 2026 The isohash Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

//! Proximal operator of the ℓ∞ norm via projection onto the ℓ1 ball.

/// Euclidean projection of `z` onto {x : ‖x‖₁ ≤ radius}.
///
/// Sort-based: with a = |z| sorted descending, the threshold is
/// θ = (Σ_{i≤k} a_i − radius) / k for the largest k with a_k > θ.
pub fn project_l1_ball(z: &[f64], radius: f64) -> Vec<f64> {
    assert!(radius >= 0.0, "radius must be nonnegative");
    let l1: f64 = z.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return z.to_vec();
    }
    let mut a: Vec<f64> = z.iter().map(|x| x.abs()).collect();
    a.sort_unstable_by(|x, y| y.total_cmp(x));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &ak) in a.iter().enumerate() {
        cumsum += ak;
        let t = (cumsum - radius) / (k + 1) as f64;
        if ak > t {
            theta = t;
        } else {
            break;
        }
    }
    z.iter()
        .map(|&x| x.signum() * (x.abs() - theta).max(0.0))
        .collect()
}

/// argmin_u ‖u‖∞ + (ρ/2)‖u − z‖², by Moreau decomposition:
/// u = z − Π_{B₁(1/ρ)}(z).
pub fn u_step(z: &[f64], rho: f64) -> Vec<f64> {
    assert!(rho > 0.0, "rho must be positive");
    let p = project_l1_ball(z, 1.0 / rho);
    z.iter().zip(&p).map(|(a, b)| a - b).collect()
}

/// ‖u‖∞ + (ρ/2)‖u − z‖².
pub fn prox_objective(u: &[f64], z: &[f64], rho: f64) -> f64 {
    let linf = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let sq: f64 = u.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    linf + 0.5 * rho * sq
}
