//! The benchmark plant
//!
//! ```text
//! ẋ1 = x1 + x2 + θ[x1² + (1 + x1) sin u]
//! ẋ2 = u
//! ```
//!
//! with its bounds certificate, the constants used for the worked instance,
//! and the reference local certificate kept as golden data.

use std::f64::consts::TAU;

use crate::local::{BoxNeighborhood, LmiCertificate, VertexConfig, VertexFamily};
use crate::numerics::Mat;
use crate::plant::{BoundsCertificate, Plant};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExamplePlant {
    pub theta: f64,
}

impl ExamplePlant {
    pub fn new(theta: f64) -> Self {
        Self { theta }
    }
}

impl Plant for ExamplePlant {
    fn dim(&self) -> usize {
        2
    }
    fn f1(&self, x1: &[f64], x2: f64) -> Vec<f64> {
        vec![x1[0] + x2 + self.theta * x1[0] * x1[0]]
    }
    fn f2(&self, _x1: &[f64], _x2: f64) -> f64 {
        1.0
    }
    fn h1(&self, x1: &[f64], _x2: f64, u: f64) -> Vec<f64> {
        vec![self.theta * (1.0 + x1[0]) * u.sin()]
    }
    fn h2(&self, _x1: &[f64], _x2: f64, _u: f64) -> f64 {
        0.0
    }
    fn f1_affine_in_x2(&self) -> bool {
        true
    }
    fn d_f1_d_x2(&self, _x1: &[f64], _x2: f64) -> Vec<f64> {
        vec![1.0]
    }
    fn d_h1_d_x2(&self, _x1: &[f64], _x2: f64, _u: f64) -> Vec<f64> {
        vec![0.0]
    }
    fn jacobian_x(&self, x: &[f64], u: f64) -> Mat<f64> {
        let th = self.theta;
        Mat::from_vec(2, 2, vec![1.0 + 2.0 * th * x[0] + th * u.sin(), 1.0, 0.0, 0.0])
    }
    fn jacobian_u(&self, x: &[f64], u: f64) -> Vec<f64> {
        vec![self.theta * (1.0 + x[0]) * u.cos(), 1.0]
    }
}

/// V1 = x1²/2, ψ1 = −(1 + K1)x1 − θx1², α(s) = 2K1·s, Ψ = θ(1 + |x1|).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleCertificate {
    pub theta: f64,
    pub k1: f64,
    pub eps: f64,
    pub m: f64,
}

impl ExampleCertificate {
    pub fn new(theta: f64, k1: f64, eps: f64, m: f64) -> Self {
        Self { theta, k1, eps, m }
    }

    /// K1 = 0.5 with the largest admissible ε and the smallest admissible M.
    pub fn reference(theta: f64) -> Self {
        let k1 = 0.5;
        let (eps, m) = derived_constants(theta, k1).expect("K1 = 0.5 exceeds 3θ/2 for the supported θ");
        Self { theta, k1, eps, m }
    }
}

impl BoundsCertificate for ExampleCertificate {
    fn x1_dim(&self) -> usize {
        1
    }
    fn v1(&self, x1: &[f64]) -> f64 {
        0.5 * x1[0] * x1[0]
    }
    fn psi1(&self, x1: &[f64]) -> f64 {
        -(1.0 + self.k1) * x1[0] - self.theta * x1[0] * x1[0]
    }
    fn alpha(&self, s: f64) -> f64 {
        2.0 * self.k1 * s
    }
    fn big_psi(&self, x1: &[f64], _x2: f64) -> f64 {
        self.theta * (1.0 + x1[0].abs())
    }
    fn eps(&self) -> f64 {
        self.eps
    }
    fn m(&self) -> f64 {
        self.m
    }
    fn grad_v1(&self, x1: &[f64]) -> Vec<f64> {
        vec![x1[0]]
    }
    fn grad_psi1(&self, x1: &[f64]) -> Vec<f64> {
        vec![-(1.0 + self.k1) - 2.0 * self.theta * x1[0]]
    }
    fn alpha_lipschitz(&self, _lo: f64, _hi: f64) -> f64 {
        2.0 * self.k1
    }
}

/// Admissible K1 interval for which 𝐀 fits inside 𝐕_μ.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct K1Window {
    pub lower: f64,
    pub upper: f64,
    pub empty: bool,
}

pub fn k1_window(theta: f64, mu: [f64; 2]) -> K1Window {
    let lower = 0.5 * theta * (1.0 / (mu[0] * mu[0]) + 3.0);
    let upper = mu[1] / mu[0] - 2.0 * theta * mu[0] - 1.0;
    K1Window { lower, upper, empty: lower >= upper }
}

/// (ε_max, M_min) with M_min evaluated at ε = ε_max.
pub fn derived_constants(theta: f64, k1: f64) -> Result<(f64, f64)> {
    if !(k1 > 1.5 * theta) {
        return Err(Error::Domain(format!("K1 = {k1} must exceed 3θ/2 = {}", 1.5 * theta)));
    }
    let eps = 1.0 - 1.5 * theta / k1;
    Ok((eps, theta / (4.0 * k1 * eps)))
}

/// Published local certificate (θ = 0.1).
pub const GOLDEN_P: [[f64; 2]; 2] = [[16.1210, 7.8345], [7.8345, 4.9138]];
pub const GOLDEN_K: [f64; 2] = [-11.2361, -6.6087];
/// Published rounding of M_min.
pub const GOLDEN_M: f64 = 0.0714;

pub fn golden_certificate() -> LmiCertificate<f64> {
    let p = Mat::from_rows(&GOLDEN_P.map(|r| r.to_vec())).expect("2x2");
    LmiCertificate::from_pk(&p, &GOLDEN_K).expect("golden P is positive definite")
}

/// Readings of the listed input-perturbation vectors [0.1, 1]ᵀ, [−0.3, 1]ᵀ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListedD {
    /// Taken literally as D_m.
    AsD,
    /// Taken as G + D_m, so D_m = listed − G.
    AsGPlusD,
}

pub fn listed_d_family(theta: f64, reading: ListedD) -> VertexFamily {
    let c = 3.0 * theta;
    let c_list = vec![Mat::from_vec(2, 2, vec![c, 0.0, 0.0, 0.0]), Mat::from_vec(2, 2, vec![-c, 0.0, 0.0, 0.0])];
    let listed = [[0.1, 1.0], [-0.3, 1.0]];
    let (d_list, label) = match reading {
        ListedD::AsD => (listed.iter().map(|d| d.to_vec()).collect(), "listed-as-D"),
        ListedD::AsGPlusD => (listed.iter().map(|d| vec![d[0] - theta, d[1] - 1.0]).collect(), "listed-as-G+D"),
    };
    VertexFamily::from_lists(c_list, d_list, label).expect("consistent 2x2 family")
}

/// Right-hand side of the Lie-derivative bound for V = V1 + w²/2 under direct backstepping.
pub fn obstruction_bound(theta: f64, k1: f64, x1: f64, x2: f64, u: f64) -> f64 {
    let psi = -(1.0 + k1) * x1 - theta * x1 * x1;
    -k1 * x1 * x1
        + x1 * theta * (1.0 + x1) * u.sin()
        + (x2 - psi)
            * (u + x1 / 2.0 + (1.0 + k1 + 2.0 * theta * k1 * x1) * (x1 + x2 + theta * (x1 * x1 + (1.0 + x1) * u.sin())))
}

/// Second difference of u ↦ E(x1, x2, u); nonzero means E is not affine in u.
pub fn obstruction_second_difference(theta: f64, k1: f64, x1: f64, x2: f64, u: f64, h: f64) -> f64 {
    let e = |v| obstruction_bound(theta, k1, x1, x2, v);
    e(u + h) - 2.0 * e(u) + e(u - h)
}

/// The worked instance.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ExampleInstance {
    pub theta: f64,
    pub k1: f64,
    pub eps: f64,
    /// Full-precision M_min.
    pub m: f64,
    /// Published rounding of M, for comparisons only.
    pub m_golden: f64,
    pub mu: [f64; 2],
    pub mu_u: f64,
    pub k_v: f64,
    pub a: f64,
    pub c: f64,
    pub c_tilde: f64,
    pub golden_p: [[f64; 2]; 2],
    pub golden_k: [f64; 2],
}

impl ExampleInstance {
    pub fn reference() -> Self {
        Self::with_theta(0.1).expect("θ = 0.1 is admissible")
    }

    /// Same K1 and design constants, ε and M recomputed for `theta`.
    pub fn with_theta(theta: f64) -> Result<Self> {
        let k1 = 0.5;
        let mu = [1.0, 2.0];
        let win = k1_window(theta, mu);
        if win.empty || !(k1 > win.lower && k1 < win.upper) {
            return Err(Error::Domain(format!(
                "K1 = {k1} outside the window ({}, {}) for θ = {theta}",
                win.lower, win.upper
            )));
        }
        let (eps, m) = derived_constants(theta, k1)?;
        Ok(Self {
            theta,
            k1,
            eps,
            m,
            m_golden: GOLDEN_M,
            mu,
            mu_u: TAU,
            k_v: 1628.6,
            a: 0.01,
            c: 10.0,
            c_tilde: 0.75,
            golden_p: GOLDEN_P,
            golden_k: GOLDEN_K,
        })
    }

    pub fn plant(&self) -> ExamplePlant {
        ExamplePlant::new(self.theta)
    }

    pub fn certificate(&self) -> ExampleCertificate {
        ExampleCertificate::new(self.theta, self.k1, self.eps, self.m)
    }

    pub fn box_neighborhood(&self) -> BoxNeighborhood {
        BoxNeighborhood::new(self.mu.to_vec(), self.mu_u).expect("positive bounds")
    }

    pub fn vertex_config(&self) -> VertexConfig {
        VertexConfig::uniform(2, 201)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
