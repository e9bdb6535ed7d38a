use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::ShellError;
use crate::geometry::Point3;

const HEADER: &str = "anchor-shell v1";

/// `{p : (p - c)^T E (p - c) <= 1}` with `E` symmetric positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    center: Point3,
    shape: [[f64; 3]; 3],
}

impl Ellipsoid {
    pub fn new(center: Point3, shape: Matrix3<f64>) -> Result<Self, ShellError> {
        if !center.is_finite() || !is_spd(&shape) {
            return Err(ShellError::NotSpd);
        }
        // Store the exactly symmetric part.
        let sym = (shape + shape.transpose()) * 0.5;
        Ok(Self { center, shape: to_rows(&sym) })
    }

    pub fn sphere(center: Point3, radius: f64) -> Result<Self, ShellError> {
        Self::new(center, Matrix3::identity() / (radius * radius))
    }

    pub fn center(&self) -> Point3 {
        self.center
    }

    pub fn shape(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.shape[r][c])
    }

    /// Quadratic-form value: 0 at the center, 1 on the boundary.
    pub fn distance(&self, p: &Point3) -> f64 {
        let d = [p.x - self.center.x, p.y - self.center.y, p.z - self.center.z];
        let s = &self.shape;
        let mut acc = 0.0;
        for r in 0..3 {
            acc += d[r] * (s[r][0] * d[0] + s[r][1] * d[1] + s[r][2] * d[2]);
        }
        acc
    }

    /// Semi-axis lengths, ascending.
    pub fn semi_axes(&self) -> [f64; 3] {
        let eig = self.shape().symmetric_eigen();
        let mut axes: Vec<f64> = eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()).collect();
        axes.sort_by(f64::total_cmp);
        [axes[0], axes[1], axes[2]]
    }

    /// Uniformly scales the ellipsoid about its center by `factor` (>1 grows).
    pub fn scaled(&self, factor: f64) -> Ellipsoid {
        Ellipsoid { center: self.center, shape: to_rows(&(self.shape() / (factor * factor))) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualEllipsoidShell {
    pub outer: Ellipsoid,
    pub inner: Ellipsoid,
}

impl DualEllipsoidShell {
    pub fn new(outer: Ellipsoid, inner: Ellipsoid) -> Result<Self, ShellError> {
        let d = outer.distance(&inner.center);
        if !(d < 1.0) {
            return Err(ShellError::InnerOutside(d));
        }
        Ok(Self { outer, inner })
    }

    pub fn d_out(&self, p: &Point3) -> f64 {
        self.outer.distance(p)
    }

    pub fn d_in(&self, p: &Point3) -> f64 {
        self.inner.distance(p)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        self.d_out(p) <= 1.0 && self.d_in(p) >= 1.0
    }

    /// `c_in - c_out`.
    pub fn offset(&self) -> Vector3<f64> {
        self.inner.center.to_vector() - self.outer.center.to_vector()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for e in [&self.outer, &self.inner] {
            for v in [e.center.x, e.center.y, e.center.z] {
                let _ = writeln!(s, "{v:?}");
            }
            for row in &e.shape {
                for v in row {
                    let _ = writeln!(s, "{v:?}");
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ShellError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == HEADER => {}
            Some((i, _)) => return Err(ShellError::Parse { line: i + 1, msg: format!("expected header `{HEADER}`") }),
            None => return Err(ShellError::Parse { line: 1, msg: "empty shell file".into() }),
        }
        let mut values = Vec::with_capacity(24);
        let mut last_line = 1;
        for (i, l) in lines {
            last_line = i + 1;
            let v: f64 = l
                .trim()
                .parse()
                .map_err(|_| ShellError::Parse { line: i + 1, msg: format!("not a number: `{}`", l.trim()) })?;
            if !v.is_finite() {
                return Err(ShellError::Parse { line: i + 1, msg: "non-finite value".into() });
            }
            values.push(v);
        }
        if values.len() != 24 {
            return Err(ShellError::Parse { line: last_line, msg: format!("expected 24 values, found {}", values.len()) });
        }
        let read = |chunk: &[f64]| -> Result<Ellipsoid, ShellError> {
            let c = Point3::new(chunk[0], chunk[1], chunk[2]);
            let m = Matrix3::from_row_slice(&chunk[3..12]);
            if (m - m.transpose()).amax() > 1e-9 {
                return Err(ShellError::NotSpd);
            }
            Ellipsoid::new(c, m)
        };
        DualEllipsoidShell::new(read(&values[0..12])?, read(&values[12..24])?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ShellError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ShellError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]
}

pub(crate) fn is_spd(m: &Matrix3<f64>) -> bool {
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.amax().max(1e-300);
    if (m - m.transpose()).amax() > 1e-9 * scale.max(1.0) {
        return false;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().all(|l| *l > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_shell() -> DualEllipsoidShell {
        DualEllipsoidShell::new(
            Ellipsoid::sphere(Point3::ORIGIN, 1.0).unwrap(),
            Ellipsoid::sphere(Point3::ORIGIN, 0.4).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn quadratic_form_examples() {
        let shell = unit_shell();
        assert_eq!(shell.d_out(&Point3::ORIGIN), 0.0);
        assert!((shell.d_out(&Point3::new(1.0, 0.0, 0.0)) - 1.0).abs() < 1e-12);
        let e = Ellipsoid::new(Point3::ORIGIN, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))).unwrap();
        assert!((e.distance(&Point3::new(0.5, 0.0, 0.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn membership_and_offset() {
        let shell = unit_shell();
        assert!(shell.contains(&Point3::new(0.7, 0.0, 0.0)));
        assert!(!shell.contains(&Point3::new(0.1, 0.0, 0.0)));
        assert!(!shell.contains(&Point3::new(1.1, 0.0, 0.0)));
        assert_eq!(shell.offset(), Vector3::zeros());
    }

    #[test]
    fn rejects_non_spd_and_outside_inner() {
        let bad = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        assert!(Ellipsoid::new(Point3::ORIGIN, bad).is_err());
        let outer = Ellipsoid::sphere(Point3::ORIGIN, 1.0).unwrap();
        let inner = Ellipsoid::sphere(Point3::new(2.0, 0.0, 0.0), 0.1).unwrap();
        assert!(matches!(DualEllipsoidShell::new(outer, inner), Err(ShellError::InnerOutside(_))));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let outer = Ellipsoid::new(
            Point3::new(0.1, -0.2, 0.3),
            Matrix3::new(2.0, 0.1, 0.0, 0.1, 3.0, 0.2, 0.0, 0.2, 1.5),
        )
        .unwrap();
        let inner = Ellipsoid::sphere(Point3::new(0.12, -0.2, 0.31), 0.1 / 3.0).unwrap();
        let shell = DualEllipsoidShell::new(outer, inner).unwrap();
        let text = shell.to_text();
        assert!(text.starts_with("anchor-shell v1\n"));
        assert_eq!(text.lines().count(), 25);
        let back = DualEllipsoidShell::from_text(&text).unwrap();
        assert_eq!(back, shell);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn loader_rejects_bad_files() {
        let shell = unit_shell();
        let text = shell.to_text();
        // Flip the sign of the first outer diagonal entry (line 5).
        let broken: String = text
            .lines()
            .enumerate()
            .map(|(i, l)| if i == 4 { "-1.0\n".to_string() } else { format!("{l}\n") })
            .collect();
        assert!(matches!(DualEllipsoidShell::from_text(&broken), Err(ShellError::NotSpd)));
        assert!(matches!(
            DualEllipsoidShell::from_text("anchor-shell v2\n"),
            Err(ShellError::Parse { line: 1, .. })
        ));
        let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(matches!(DualEllipsoidShell::from_text(&truncated), Err(ShellError::Parse { .. })));
        // Off-diagonal entry s01 only: the matrix is no longer symmetric.
        let asym: String = text
            .lines()
            .enumerate()
            .map(|(i, l)| if i == 5 { "0.5\n".to_string() } else { format!("{l}\n") })
            .collect();
        assert!(matches!(DualEllipsoidShell::from_text(&asym), Err(ShellError::NotSpd)));
    }
}
