//! Upper half-plane geometry: SL(2,R) matrices acting by fractional linear
//! maps, geodesics given by their endpoints on the real line, and the frame
//! representation of unit tangent vectors.
//!
//! A unit tangent vector of the half-plane is identified with the matrix `g`
//! carrying the reference vector (i, pointing up) onto it. The geodesic flow
//! is then right multiplication by `diag(e^{t/2}, e^{-t/2})` and isometries act
//! by left multiplication.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub type C64 = Complex64;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 1.0)
    }

    pub fn from_array(m: [f64; 4]) -> Self {
        Self::new(m[0], m[1], m[2], m[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    /// Geodesic flow generator: the frame moved a distance `t` along itself.
    pub fn geodesic(t: f64) -> Self {
        let e = (0.5 * t).exp();
        Self::new(e, 0.0, 0.0, 1.0 / e)
    }

    /// Rotation about i turning tangent vectors at i by `beta`.
    pub fn rotation(beta: f64) -> Self {
        let (s, c) = (0.5 * beta).sin_cos();
        Self::new(c, s, -s, c)
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn inverse(&self) -> Self {
        let det = self.det();
        Self::new(self.d / det, -self.b / det, -self.c / det, self.a / det)
    }

    /// Rescales to determinant one.
    pub fn normalized(&self) -> Self {
        let s = self.det().sqrt();
        Self::new(self.a / s, self.b / s, self.c / s, self.d / s)
    }

    pub fn apply(&self, z: C64) -> C64 {
        (z * self.a + self.b) / (z * self.c + self.d)
    }

    /// Action on the boundary circle; `f64::INFINITY` stands for the point at infinity.
    pub fn apply_boundary(&self, x: f64) -> f64 {
        if x.is_infinite() {
            if self.c == 0.0 {
                f64::INFINITY
            } else {
                self.a / self.c
            }
        } else {
            let den = self.c * x + self.d;
            if den == 0.0 {
                f64::INFINITY
            } else {
                (self.a * x + self.b) / den
            }
        }
    }

    /// Argument of the derivative at `z`: how much Euclidean directions rotate.
    pub fn derivative_arg(&self, z: C64) -> f64 {
        -2.0 * (z * self.c + self.d).arg()
    }

    pub fn is_hyperbolic(&self) -> bool {
        self.trace().abs() > 2.0 + 1e-12
    }

    /// Translation length `2 arccosh(|tr|/2)` of a hyperbolic element.
    pub fn translation_length(&self) -> Result<f64> {
        let t = self.trace().abs();
        if t <= 2.0 + 1e-12 {
            return Err(LabError::NotHyperbolic(t));
        }
        Ok(2.0 * (0.5 * t).acosh())
    }

    /// Oriented axis (repelling -> attracting fixed point) of a hyperbolic element.
    pub fn axis(&self) -> Result<Geodesic> {
        let tr = self.trace();
        if tr.abs() <= 2.0 + 1e-12 {
            return Err(LabError::NotHyperbolic(tr.abs()));
        }
        // work with the representative of positive trace
        let m = if tr < 0.0 {
            Self::new(-self.a, -self.b, -self.c, -self.d)
        } else {
            *self
        };
        let (p, q) = if m.c == 0.0 {
            let finite = m.b / (m.d - m.a);
            if m.a / m.d > 1.0 {
                (finite, f64::INFINITY)
            } else {
                (f64::INFINITY, finite)
            }
        } else {
            let disc = (m.trace() * m.trace() - 4.0).sqrt();
            let x1 = (m.a - m.d + disc) / (2.0 * m.c);
            let x2 = (m.a - m.d - disc) / (2.0 * m.c);
            // attracting fixed point has |c x + d| > 1
            if (m.c * x1 + m.d).abs() > 1.0 {
                (x2, x1)
            } else {
                (x1, x2)
            }
        };
        Ok(Geodesic::new(p, q))
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        (self.a - other.a)
            .abs()
            .max((self.b - other.b).abs())
            .max((self.c - other.c).abs())
            .max((self.d - other.d).abs())
    }
}

impl std::ops::Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

/// Hyperbolic distance in the upper half-plane.
pub fn distance(z: C64, w: C64) -> f64 {
    2.0 * ((z - w).norm() / (2.0 * (z.im * w.im).sqrt())).asinh()
}

/// `cosh` of the hyperbolic distance; monotone in the distance and cheaper.
pub fn cosh_distance(z: C64, w: C64) -> f64 {
    1.0 + (z - w).norm_sqr() / (2.0 * z.im * w.im)
}

/// Frame carrying (i, up) to the unit vector at `z` with Euclidean direction `psi`.
pub fn frame(z: C64, psi: f64) -> Mat2 {
    let sy = z.im.sqrt();
    Mat2::new(sy, z.re / sy, 0.0, 1.0 / sy) * Mat2::rotation(psi - FRAC_PI_2)
}

/// Base point and Euclidean direction angle of a frame.
pub fn frame_state(g: &Mat2) -> (C64, f64) {
    let i = C64::new(0.0, 1.0);
    let z = g.apply(i);
    (z, wrap_angle(FRAC_PI_2 + g.derivative_arg(i)))
}

/// A complete oriented geodesic of the half-plane, stored by its endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geodesic {
    pub repelling: f64,
    pub attracting: f64,
}

impl Geodesic {
    pub fn new(repelling: f64, attracting: f64) -> Self {
        Self {
            repelling,
            attracting,
        }
    }

    pub fn image(&self, m: &Mat2) -> Self {
        Self::new(
            m.apply_boundary(self.repelling),
            m.apply_boundary(self.attracting),
        )
    }

    /// Orientation-preserving map sending the repelling end to 0 and the
    /// attracting end to infinity, so that the geodesic becomes the positive
    /// imaginary axis traversed upward.
    pub fn normalizer(&self) -> Mat2 {
        let (p, q) = (self.repelling, self.attracting);
        let m = if q.is_infinite() {
            Mat2::new(1.0, -p, 0.0, 1.0)
        } else if p.is_infinite() {
            Mat2::new(0.0, -1.0, 1.0, -q)
        } else if p - q > 0.0 {
            Mat2::new(1.0, -p, 1.0, -q)
        } else {
            Mat2::new(-1.0, p, 1.0, -q)
        };
        m.normalized()
    }

    /// Signed `sinh` of the distance from `z`: positive on the right of the
    /// oriented geodesic.
    pub fn signed_sinh_distance(&self, z: C64) -> f64 {
        let u = self.normalizer().apply(z);
        u.re / u.im
    }

    pub fn distance_to(&self, z: C64) -> f64 {
        self.signed_sinh_distance(z).abs().asinh()
    }

    /// Foot of the perpendicular from `z`, with the direction of the geodesic there.
    pub fn foot(&self, z: C64) -> (C64, f64) {
        let n = self.normalizer();
        let u = n.apply(z);
        let f = C64::new(0.0, u.norm());
        let ninv = n.inverse();
        let w = ninv.apply(f);
        (w, wrap_angle(FRAC_PI_2 + ninv.derivative_arg(f)))
    }

    /// Whether the two geodesics cross (endpoints interleave on the circle).
    pub fn crosses(&self, other: &Geodesic) -> bool {
        // move one endpoint of self to infinity so the circle order becomes the line order
        let n = self.normalizer();
        let r = n.apply_boundary(other.repelling);
        let s = n.apply_boundary(other.attracting);
        if r.is_infinite() || s.is_infinite() {
            return false;
        }
        (r < 0.0) != (s < 0.0) && r != 0.0 && s != 0.0
    }

    /// Whether both geodesics have the same endpoint set.
    pub fn same_as(&self, other: &Geodesic, tol: f64) -> bool {
        let close = |x: f64, y: f64| {
            (x.is_infinite() && y.is_infinite())
                || (x.is_finite() && y.is_finite() && (x - y).abs() <= tol * (1.0 + x.abs()))
        };
        (close(self.repelling, other.repelling) && close(self.attracting, other.attracting))
            || (close(self.repelling, other.attracting) && close(self.attracting, other.repelling))
    }

    /// Distance between disjoint geodesics (0 when they cross or share an end).
    pub fn distance_between(&self, other: &Geodesic) -> f64 {
        if self.crosses(other) {
            return 0.0;
        }
        let n = self.normalizer();
        let r = n.apply_boundary(other.repelling).abs();
        let s = n.apply_boundary(other.attracting).abs();
        if r.is_infinite() || s.is_infinite() || r == 0.0 || s == 0.0 {
            return 0.0;
        }
        ((r + s) / (r - s).abs()).acosh()
    }
}

/// A word in the generators; a letter is `(generator index, +1 | -1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word(pub Vec<(usize, i8)>);

impl Word {
    pub fn letter(g: usize) -> Self {
        Word(vec![(g, 1)])
    }

    /// Parses words such as `AB`, `ABab`, `A B A^-1 B^-1` or `ABA⁻¹B⁻¹`.
    /// Lowercase letters denote inverses.
    pub fn parse(s: &str, names: &[char]) -> Result<Self> {
        let chars: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
        let mut out = Vec::new();
        let mut k = 0;
        while k < chars.len() {
            let ch = chars[k];
            let (idx, mut sign) = if let Some(i) = names.iter().position(|&n| n == ch) {
                (i, 1i8)
            } else if let Some(i) = names
                .iter()
                .position(|&n| n.to_ascii_lowercase() == ch && n != ch)
            {
                (i, -1i8)
            } else {
                return Err(LabError::InvalidParameter(format!(
                    "unknown letter '{ch}' in word '{s}'"
                )));
            };
            k += 1;
            // optional inverse markers
            let rest: String = chars[k..].iter().take(3).collect();
            if rest.starts_with("^-1") {
                sign = -sign;
                k += 3;
            } else if rest.starts_with("⁻¹") {
                sign = -sign;
                k += 2;
            }
            out.push((idx, sign));
        }
        Ok(Word(out))
    }

    pub fn eval(&self, generators: &[Mat2]) -> Mat2 {
        self.0.iter().fold(Mat2::identity(), |acc, &(g, s)| {
            let m = if s > 0 {
                generators[g]
            } else {
                generators[g].inverse()
            };
            acc * m
        })
    }

    pub fn inverse(&self) -> Self {
        Word(self.0.iter().rev().map(|&(g, s)| (g, -s)).collect())
    }

    pub fn concat(&self, other: &Word) -> Self {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v).reduced()
    }

    pub fn pow(&self, n: usize) -> Self {
        let mut v = Vec::with_capacity(self.0.len() * n);
        for _ in 0..n {
            v.extend_from_slice(&self.0);
        }
        Word(v).reduced()
    }

    /// Free reduction (cancels `x x^-1`).
    pub fn reduced(&self) -> Self {
        let mut out: Vec<(usize, i8)> = Vec::with_capacity(self.0.len());
        for &l in &self.0 {
            if let Some(&last) = out.last() {
                if last.0 == l.0 && last.1 == -l.1 {
                    out.pop();
                    continue;
                }
            }
            out.push(l);
        }
        Word(out)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// All freely reduced words of length `1..=max_len`.
    pub fn enumerate(n_generators: usize, max_len: usize) -> Vec<Word> {
        let letters: Vec<(usize, i8)> = (0..n_generators)
            .flat_map(|g| [(g, 1i8), (g, -1i8)])
            .collect();
        let mut out = Vec::new();
        let mut frontier = vec![Word(Vec::new())];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for w in &frontier {
                for &l in &letters {
                    if let Some(&last) = w.0.last() {
                        if last.0 == l.0 && last.1 == -l.1 {
                            continue;
                        }
                    }
                    let mut v = w.0.clone();
                    v.push(l);
                    next.push(Word(v));
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    pub fn render(&self, names: &[char]) -> String {
        self.0
            .iter()
            .map(|&(g, s)| {
                if s > 0 {
                    names[g]
                } else {
                    names[g].to_ascii_lowercase()
                }
            })
            .collect()
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render(&['A', 'B', 'C', 'D']))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn a() -> Mat2 {
        Mat2::new(1.0, 1.0, 1.0, 2.0)
    }
    fn b() -> Mat2 {
        Mat2::new(1.0, -1.0, -1.0, 2.0)
    }

    #[test]
    fn translation_length_of_trace_three() {
        assert_abs_diff_eq!(a().translation_length().unwrap(), 1.9248473002384139, epsilon = 1e-12);
        let p = Mat2::new(1.0, 1.0, 0.0, 1.0);
        assert!(matches!(p.translation_length(), Err(LabError::NotHyperbolic(_))));
    }

    #[test]
    fn commutator_of_punctured_torus_is_parabolic() {
        let w = Word::parse("ABA⁻¹B⁻¹", &['A', 'B']).unwrap();
        assert_eq!(w, Word::parse("ABab", &['A', 'B']).unwrap());
        let c = w.eval(&[a(), b()]);
        assert_abs_diff_eq!(c.trace(), -2.0, epsilon = 1e-12);
    }

    #[test]
    fn axis_is_fixed_and_attracting() {
        let ax = a().axis().unwrap();
        for x in [ax.repelling, ax.attracting] {
            assert_abs_diff_eq!(a().apply_boundary(x), x, epsilon = 1e-12);
        }
        let n = ax.normalizer();
        let conj = n * a() * n.inverse();
        // conjugate is z -> lambda z with lambda > 1
        assert!(conj.b.abs() < 1e-12 && conj.c.abs() < 1e-12);
        assert_abs_diff_eq!(
            (conj.a / conj.d).ln(),
            a().translation_length().unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn frame_round_trip_and_flow() {
        let z = C64::new(0.3, 1.7);
        let g = frame(z, 0.4);
        let (w, psi) = frame_state(&g);
        assert_abs_diff_eq!((w - z).norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(psi, 0.4, epsilon = 1e-14);
        // flowing the upward vector at i for time 1 multiplies the height by e
        let h = Mat2::identity() * Mat2::geodesic(1.0);
        let (w, psi) = frame_state(&h);
        assert_abs_diff_eq!(w.im, std::f64::consts::E, epsilon = 1e-14);
        assert_abs_diff_eq!(psi, FRAC_PI_2, epsilon = 1e-14);
        let moved = frame_state(&(g * Mat2::geodesic(2.5))).0;
        assert_abs_diff_eq!(distance(z, moved), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn foot_lies_on_geodesic() {
        let ax = a().axis().unwrap();
        let (f, dir) = ax.foot(C64::new(0.0, 1.0));
        assert!(ax.distance_to(f) < 1e-12);
        // moving along the foot direction stays on the axis
        let g = frame(f, dir) * Mat2::geodesic(0.7);
        assert!(ax.distance_to(frame_state(&g).0) < 1e-12);
    }

    #[test]
    fn crossing_and_distance() {
        let ax = a().axis().unwrap();
        let bx = b().axis().unwrap();
        assert!(ax.crosses(&bx));
        let vertical = Geodesic::new(0.0, f64::INFINITY);
        let shifted = Geodesic::new(1.0, 4.0);
        assert!(!vertical.crosses(&shifted));
        // circle centred 2.5 radius 1.5: distance from the imaginary axis is acosh(5/3)
        assert_abs_diff_eq!(vertical.distance_between(&shifted), (5.0f64 / 3.0).acosh(), epsilon = 1e-12);
    }

    #[test]
    fn word_algebra() {
        let w = Word::parse("AAb", &['A', 'B']).unwrap();
        assert_eq!(w.concat(&w.inverse()), Word(vec![]));
        assert_eq!(Word::enumerate(2, 2).len(), 4 + 12);
        assert_eq!(w.render(&['A', 'B']), "AAb");
    }
}
