//! Runge-Kutta coefficient sets: explicit tableaux, IMEX pairs and the
//! zone tableaux of the second-order multirate scheme (MRK2).
//!
//! Built-in schemes:
//!
//! | name      | kind      | order | source                                   |
//! |-----------|-----------|-------|------------------------------------------|
//! | `rk2_ssp` | explicit  | 2     | Heun / SSP-RK2                           |
//! | `rk4`     | explicit  | 4     | classic Runge-Kutta                      |
//! | `ark2`    | IMEX pair | 2     | Giraldo, Kelly, Constantinescu (2013)    |
//! | `ark3`    | IMEX pair | 3     | ARK3(2)4L[2]SA, Kennedy-Carpenter (2003) |
//! | `mrk2`    | multirate | 2     | zone tableaux over an SSP-RK2 base       |
//!
//! Coefficients are stored as `f64` evaluated from exact rationals or
//! radical expressions, so structural identities (row sums, weight sums)
//! hold to machine precision.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Structural kind of a tableau, used by [`ButcherTableau::validate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableauKind {
    /// A strictly lower triangular.
    Explicit,
    /// A lower triangular, nonzero diagonal allowed.
    DiagonallyImplicit,
}

/// One Runge-Kutta coefficient set (A, b, c).
///
/// `a` is stored as a full square matrix in row-major `Vec<Vec<f64>>` form;
/// entries outside the triangular part must be zero per `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ButcherTableau {
    pub name: String,
    pub kind: TableauKind,
    /// Classic order of the scheme on its own.
    pub order: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Human-readable provenance of the coefficient values.
    pub source: String,
}

impl ButcherTableau {
    /// Stage count.
    pub fn s(&self) -> usize {
        self.b.len()
    }

    pub fn is_explicit(&self) -> bool {
        self.a
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| j < i || v == 0.0))
    }

    pub fn is_diagonally_implicit(&self) -> bool {
        self.a
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| j <= i || v == 0.0))
    }

    pub fn has_negative_weights(&self) -> bool {
        self.b.iter().any(|&w| w < 0.0)
    }

    /// Checks shapes, finiteness, triangular structure, row-sum consistency
    /// (c_i = sum_j A_ij to 1e-14) and the weight sum. Violations come back
    /// as data; an empty list means the tableau is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let s = self.s();
        if s == 0 {
            violations.push("empty tableau".to_string());
            return violations;
        }
        if self.a.len() != s || self.c.len() != s || self.a.iter().any(|row| row.len() != s) {
            violations.push(format!("shape mismatch: expected {s}x{s} A with b,c of length {s}"));
            return violations;
        }
        let finite = self.a.iter().flatten().chain(&self.b).chain(&self.c);
        if finite.clone().any(|v| !v.is_finite()) {
            violations.push("non-finite coefficient".to_string());
        }
        for (i, row) in self.a.iter().enumerate() {
            let lower = match self.kind {
                TableauKind::Explicit => i,
                TableauKind::DiagonallyImplicit => i + 1,
            };
            if row[lower..].iter().any(|&v| v != 0.0) {
                violations.push(format!("upper-triangular entry nonzero at stage {}", i + 1));
            }
            let sum: f64 = row.iter().sum();
            if (sum - self.c[i]).abs() > 1e-14 {
                violations.push(format!("row-sum mismatch at stage {}", i + 1));
            }
        }
        let bsum: f64 = self.b.iter().sum();
        if (bsum - 1.0).abs() > 1e-14 {
            violations.push("weights do not sum to 1".to_string());
        }
        violations
    }
}

/// A coupled explicit/implicit tableau pair for additive (IMEX) RK.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImexPair {
    pub name: String,
    pub order: usize,
    pub explicit_part: ButcherTableau,
    pub implicit_part: ButcherTableau,
}

impl ImexPair {
    pub fn s(&self) -> usize {
        self.explicit_part.s()
    }

    /// True iff b_i = b~_i for all stages; the single-sum form of the
    /// relaxation inner product applies only in that case.
    pub fn weights_equal(&self) -> bool {
        self.explicit_part.b == self.implicit_part.b
    }

    pub fn validate(&self) -> Vec<String> {
        let mut violations = self.explicit_part.validate();
        violations.extend(self.implicit_part.validate());
        if self.explicit_part.s() != self.implicit_part.s() {
            violations.push("stage-count mismatch between pair members".to_string());
        }
        if !self.explicit_part.is_explicit() {
            violations.push("explicit part is not strictly lower triangular".to_string());
        }
        if !self.implicit_part.is_diagonally_implicit() {
            violations.push("implicit part is not DIRK".to_string());
        }
        violations
    }
}

/// Zone tableaux of the second-order multirate scheme: one 4-stage tableau
/// per zone role plus the 2-stage SSP-RK2 used by root-level blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mrk2ZoneTableaux {
    /// Fast zone and fast buffer: two composed SSP-RK2 half-steps.
    pub fast: ButcherTableau,
    pub slow_buffer: ButcherTableau,
    pub slow: ButcherTableau,
    pub root_level: ButcherTableau,
}

impl Mrk2ZoneTableaux {
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        for t in [&self.fast, &self.slow_buffer, &self.slow, &self.root_level] {
            violations.extend(t.validate().into_iter().map(|v| format!("{}: {v}", t.name)));
        }
        for t in [&self.fast, &self.slow_buffer, &self.slow] {
            if t.s() != 4 {
                violations.push(format!("{}: expected 4 stages", t.name));
            }
        }
        if self.root_level.s() != 2 {
            violations.push("root_level: expected 2 stages".to_string());
        }
        violations
    }
}

/// Any built-in coefficient set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Scheme {
    Explicit(ButcherTableau),
    Imex(ImexPair),
    Multirate(Mrk2ZoneTableaux),
}

impl Scheme {
    pub fn name(&self) -> &str {
        match self {
            Scheme::Explicit(t) => &t.name,
            Scheme::Imex(p) => &p.name,
            Scheme::Multirate(_) => "mrk2",
        }
    }

    pub fn validate(&self) -> Vec<String> {
        match self {
            Scheme::Explicit(t) => t.validate(),
            Scheme::Imex(p) => p.validate(),
            Scheme::Multirate(z) => z.validate(),
        }
    }
}

/// Looks up a built-in scheme by name.
///
/// Known names: `rk2_ssp`, `rk4`, `ark2`, `ark3`, `mrk2`.
pub fn builtin_tableau(name: &str) -> Result<Scheme> {
    match name {
        "rk2_ssp" => Ok(Scheme::Explicit(rk2_ssp())),
        "rk4" => Ok(Scheme::Explicit(rk4())),
        "ark2" => Ok(Scheme::Imex(ark2())),
        "ark3" => Ok(Scheme::Imex(ark3())),
        "mrk2" => Ok(Scheme::Multirate(mrk2_zones())),
        other => Err(Error::NotFound(format!("scheme '{other}'"))),
    }
}

/// Heun's method / two-stage second-order SSP-RK.
pub fn rk2_ssp() -> ButcherTableau {
    ButcherTableau {
        name: "rk2_ssp".to_string(),
        kind: TableauKind::Explicit,
        order: 2,
        a: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
        b: vec![0.5, 0.5],
        c: vec![0.0, 1.0],
        source: "standard two-stage SSP-RK2 (Heun)".to_string(),
    }
}

/// Classic four-stage fourth-order Runge-Kutta.
pub fn rk4() -> ButcherTableau {
    ButcherTableau {
        name: "rk4".to_string(),
        kind: TableauKind::Explicit,
        order: 4,
        a: vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.5, 0.0, 0.0, 0.0],
            vec![0.0, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ],
        b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        c: vec![0.0, 0.5, 0.5, 1.0],
        source: "classic RK4".to_string(),
    }
}

/// Three-stage second-order ARK2 pair of Giraldo, Kelly and Constantinescu
/// (SIAM J. Sci. Comput. 35(5), 2013): explicit part paired with an
/// L-stable ESDIRK part, b = b~ and shared abscissae.
pub fn ark2() -> ImexPair {
    let sqrt2 = std::f64::consts::SQRT_2;
    let gamma = 1.0 - 1.0 / sqrt2;
    let delta = 0.25 * sqrt2;
    let c = vec![0.0, 2.0 - sqrt2, 1.0];
    let b = vec![delta, delta, gamma];
    let explicit_part = ButcherTableau {
        name: "ark2_explicit".to_string(),
        kind: TableauKind::Explicit,
        order: 2,
        a: vec![
            vec![0.0, 0.0, 0.0],
            vec![2.0 - sqrt2, 0.0, 0.0],
            vec![(3.0 - 2.0 * sqrt2) / 6.0, (3.0 + 2.0 * sqrt2) / 6.0, 0.0],
        ],
        b: b.clone(),
        c: c.clone(),
        source: "ARK2 explicit part, Giraldo-Kelly-Constantinescu (2013)".to_string(),
    };
    let implicit_part = ButcherTableau {
        name: "ark2_implicit".to_string(),
        kind: TableauKind::DiagonallyImplicit,
        order: 2,
        a: vec![
            vec![0.0, 0.0, 0.0],
            vec![gamma, gamma, 0.0],
            vec![delta, delta, gamma],
        ],
        b,
        c,
        source: "ARK2 implicit part (ESDIRK), Giraldo-Kelly-Constantinescu (2013)".to_string(),
    };
    ImexPair {
        name: "ark2".to_string(),
        order: 2,
        explicit_part,
        implicit_part,
    }
}

/// Four-stage third-order ARK3(2)4L[2]SA pair of Kennedy and Carpenter
/// (Appl. Numer. Math. 44, 2003). Stiffly accurate ESDIRK implicit part,
/// b = b~; note b_2 < 0, so nonnegative-weight stability arguments do not
/// apply and the pair is flagged by `has_negative_weights`.
pub fn ark3() -> ImexPair {
    let gamma = 1767732205903.0 / 4055673282236.0;
    let c = vec![0.0, 2.0 * gamma, 3.0 / 5.0, 1.0];
    let b = vec![
        1471266399579.0 / 7840856788654.0,
        -4482444167858.0 / 7529755066697.0,
        11266239266428.0 / 11593286722821.0,
        gamma,
    ];
    let explicit_part = ButcherTableau {
        name: "ark3_explicit".to_string(),
        kind: TableauKind::Explicit,
        order: 3,
        a: vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![2.0 * gamma, 0.0, 0.0, 0.0],
            vec![
                5535828885825.0 / 10492691773637.0,
                788022342437.0 / 10882634858940.0,
                0.0,
                0.0,
            ],
            vec![
                6485989280629.0 / 16251701735622.0,
                -4246266847089.0 / 9704473918619.0,
                10755448449292.0 / 10357097424841.0,
                0.0,
            ],
        ],
        b: b.clone(),
        c: c.clone(),
        source: "ARK3(2)4L[2]SA explicit part, Kennedy-Carpenter (2003)".to_string(),
    };
    let implicit_part = ButcherTableau {
        name: "ark3_implicit".to_string(),
        kind: TableauKind::DiagonallyImplicit,
        order: 3,
        a: vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![gamma, gamma, 0.0, 0.0],
            vec![
                2746238789719.0 / 10658868560708.0,
                -640167445237.0 / 6845629431997.0,
                gamma,
                0.0,
            ],
            vec![b[0], b[1], b[2], gamma],
        ],
        b,
        c,
        source: "ARK3(2)4L[2]SA implicit part (ESDIRK), Kennedy-Carpenter (2003)".to_string(),
    };
    ImexPair {
        name: "ark3".to_string(),
        order: 3,
        explicit_part,
        implicit_part,
    }
}

/// Zone tableaux of the second-order multirate scheme.
///
/// The fast tableau is exactly two composed SSP-RK2 half-steps. The slow
/// tableau advances with SSP-RK2 over the full block step using only its
/// first and fourth stages; the slow buffer repeats the start state at
/// stage 3 so that its interface data line up with the fast side.
pub fn mrk2_zones() -> Mrk2ZoneTableaux {
    let fast = ButcherTableau {
        name: "mrk2_fast".to_string(),
        kind: TableauKind::Explicit,
        order: 2,
        a: vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.5, 0.0, 0.0, 0.0],
            vec![0.25, 0.25, 0.0, 0.0],
            vec![0.25, 0.25, 0.5, 0.0],
        ],
        b: vec![0.25, 0.25, 0.25, 0.25],
        c: vec![0.0, 0.5, 0.5, 1.0],
        source: "MRK2 fast zone/buffer: two composed SSP-RK2 half-steps".to_string(),
    };
    let slow_buffer = ButcherTableau {
        name: "mrk2_slow_buffer".to_string(),
        kind: TableauKind::Explicit,
        order: 2,
        a: vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ],
        b: vec![0.25, 0.25, 0.25, 0.25],
        c: vec![0.0, 1.0, 0.0, 1.0],
        source: "MRK2 slow buffer zone".to_string(),
    };
    let slow = ButcherTableau {
        name: "mrk2_slow".to_string(),
        kind: TableauKind::Explicit,
        order: 2,
        a: vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
        ],
        b: vec![0.5, 0.0, 0.0, 0.5],
        c: vec![0.0, 1.0, 0.0, 1.0],
        source: "MRK2 slow zone: SSP-RK2 on stages 1 and 4".to_string(),
    };
    let mut root_level = rk2_ssp();
    root_level.name = "mrk2_root".to_string();
    root_level.source = "MRK2 root-level block update (SSP-RK2)".to_string();
    Mrk2ZoneTableaux {
        fast,
        slow_buffer,
        slow,
        root_level,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One explicit RK step on a scalar problem, straight off the tableau.
    fn scalar_step(t: &ButcherTableau, rhs: impl Fn(f64) -> f64, q0: f64, dt: f64) -> f64 {
        let s = t.s();
        let mut k = vec![0.0; s];
        for i in 0..s {
            let mut qi = q0;
            for j in 0..i {
                qi += dt * t.a[i][j] * k[j];
            }
            k[i] = rhs(qi);
        }
        q0 + dt * (0..s).map(|i| t.b[i] * k[i]).sum::<f64>()
    }

    #[test]
    fn builtin_lookup() {
        for name in ["rk2_ssp", "rk4", "ark2", "ark3", "mrk2"] {
            let scheme = builtin_tableau(name).unwrap();
            assert_eq!(scheme.name(), name);
            assert!(scheme.validate().is_empty(), "{name}: {:?}", scheme.validate());
        }
        assert!(matches!(builtin_tableau("rk5"), Err(Error::NotFound(_))));
    }

    #[test]
    fn weights_sum_to_one() {
        let mut all = vec![rk2_ssp(), rk4()];
        for p in [ark2(), ark3()] {
            all.push(p.explicit_part);
            all.push(p.implicit_part);
        }
        let z = mrk2_zones();
        all.extend([z.fast, z.slow_buffer, z.slow, z.root_level]);
        for t in &all {
            let sum: f64 = t.b.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-14, "{}: sum b = {sum}", t.name);
        }
    }

    #[test]
    fn rk2_ssp_matches_reference() {
        let t = rk2_ssp();
        assert_eq!(t.a, vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(t.b, vec![0.5, 0.5]);
        // stability polynomial of SSP2 is 1 + z + z^2/2
        let z = -0.37;
        let amp = scalar_step(&t, |q| z * q, 1.0, 1.0);
        assert!((amp - (1.0 + z + 0.5 * z * z)).abs() <= 1e-15);
    }

    #[test]
    fn mrk2_tableaux_match_published_values() {
        let z = mrk2_zones();
        assert_eq!(z.fast.b, vec![0.25, 0.25, 0.25, 0.25]);
        assert_eq!(z.fast.a[1], vec![0.5, 0.0, 0.0, 0.0]);
        assert_eq!(z.fast.a[2], vec![0.25, 0.25, 0.0, 0.0]);
        assert_eq!(z.fast.a[3], vec![0.25, 0.25, 0.5, 0.0]);
        assert_eq!(z.fast.c, vec![0.0, 0.5, 0.5, 1.0]);
        assert_eq!(z.slow_buffer.b, vec![0.25, 0.25, 0.25, 0.25]);
        assert_eq!(z.slow_buffer.a[1], vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(z.slow_buffer.a[3], vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(z.slow_buffer.c, vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(z.slow.b, vec![0.5, 0.0, 0.0, 0.5]);
        assert_eq!(z.slow.a[1], vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(z.slow.a[3], vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn fast_tableau_composes_two_ssp2_half_steps() {
        // holds for arbitrary right-hand sides, not just linear ones
        let rhs = |q: f64| q * q - q.sin() + 0.3;
        let (q0, dt) = (0.8, 0.45);
        let fast = mrk2_zones().fast;
        let ssp2 = rk2_ssp();
        let half1 = scalar_step(&ssp2, rhs, q0, 0.5 * dt);
        let composed = scalar_step(&ssp2, rhs, half1, 0.5 * dt);
        let direct = scalar_step(&fast, rhs, q0, dt);
        assert!((direct - composed).abs() <= 1e-14 * composed.abs().max(1.0));
        // and the linear amplification factor equals the SSP2 one squared
        for z in [0.3, -0.7, 1.1] {
            let direct = scalar_step(&fast, |q| z * q, 1.0, 1.0);
            let p = 1.0 + 0.5 * z + 0.125 * z * z;
            assert!((direct - p * p).abs() <= 1e-14);
        }
    }

    #[test]
    fn ark2_structure() {
        let p = ark2();
        assert!(p.weights_equal());
        assert!(p.validate().is_empty(), "{:?}", p.validate());
        assert!(!p.explicit_part.has_negative_weights());
        // stiffly accurate implicit part: last row equals b
        assert_eq!(p.implicit_part.a[2], p.implicit_part.b);
        // second-order condition sum b_i c_i = 1/2 for both parts
        for t in [&p.explicit_part, &p.implicit_part] {
            let bc: f64 = t.b.iter().zip(&t.c).map(|(b, c)| b * c).sum();
            assert!((bc - 0.5).abs() <= 1e-14, "{}: {bc}", t.name);
        }
        let sqrt2 = std::f64::consts::SQRT_2;
        assert!((p.explicit_part.c[1] - (2.0 - sqrt2)).abs() <= 1e-15);
    }

    #[test]
    fn ark3_order_conditions() {
        let p = ark3();
        assert!(p.weights_equal());
        assert!(p.validate().is_empty(), "{:?}", p.validate());
        // the published rational coefficients satisfy the third-order
        // conditions to well below 1e-12 in f64
        for t in [&p.explicit_part, &p.implicit_part] {
            let bc: f64 = t.b.iter().zip(&t.c).map(|(b, c)| b * c).sum();
            let bc2: f64 = t.b.iter().zip(&t.c).map(|(b, c)| b * c * c).sum();
            assert!((bc - 0.5).abs() <= 1e-13, "{}: sum b c = {bc}", t.name);
            assert!((bc2 - 1.0 / 3.0).abs() <= 1e-13, "{}: sum b c^2 = {bc2}", t.name);
            let mut bac = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    bac += t.b[i] * t.a[i][j] * t.c[j];
                }
            }
            assert!((bac - 1.0 / 6.0).abs() <= 1e-12, "{}: b'Ac = {bac}", t.name);
        }
        // negative weight b_2 is expected and must be flagged
        assert!(p.explicit_part.has_negative_weights());
        assert!(p.implicit_part.a[3][..3] == p.implicit_part.b[..3]);
    }

    #[test]
    fn validate_reports_violations() {
        let mut t = rk2_ssp();
        t.a[1][0] = 0.25; // row sum no longer matches c_2 = 1
        let v = t.validate();
        assert!(v.iter().any(|m| m.contains("row-sum mismatch at stage 2")), "{v:?}");

        let mut t = rk2_ssp();
        t.a[0][1] = 0.5;
        t.c[0] = 0.5;
        let v = t.validate();
        assert!(v.iter().any(|m| m.contains("upper-triangular")), "{v:?}");

        let mut t = rk4();
        t.b[2] = f64::NAN;
        assert!(t.validate().iter().any(|m| m.contains("non-finite")));

        // explicit Euler is fine
        let euler = ButcherTableau {
            name: "euler".to_string(),
            kind: TableauKind::Explicit,
            order: 1,
            a: vec![vec![0.0]],
            b: vec![1.0],
            c: vec![0.0],
            source: "test".to_string(),
        };
        assert!(euler.validate().is_empty());
    }

    #[test]
    fn json_roundtrip_preserves_coefficients() {
        for name in ["rk2_ssp", "rk4", "ark2", "ark3", "mrk2"] {
            let scheme = builtin_tableau(name).unwrap();
            let text = serde_json::to_string_pretty(&scheme).unwrap();
            let back: Scheme = serde_json::from_str(&text).unwrap();
            assert_eq!(scheme, back, "{name} JSON roundtrip changed values");
        }
    }
}
