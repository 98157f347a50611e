//! Target-path generation: cubic Bezier curves discretized into points
//! with tangent headings.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se2::wrap;

/// One sample of the target path: position plus the tangent heading of
/// the underlying curve at that position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub x_mm: f64,
    pub y_mm: f64,
    pub theta_rad: f64,
}

impl PathPoint {
    pub fn new(x_mm: f64, y_mm: f64, theta_rad: f64) -> Self {
        Self {
            x_mm,
            y_mm,
            theta_rad: wrap(theta_rad),
        }
    }

    pub fn distance_to(&self, x_mm: f64, y_mm: f64) -> f64 {
        ((self.x_mm - x_mm).powi(2) + (self.y_mm - y_mm).powi(2)).sqrt()
    }
}

/// Ordered list of path points; at least two, with no repeated positions
/// between neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPath {
    points: Vec<PathPoint>,
}

impl TargetPath {
    pub fn new(points: Vec<PathPoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Config(format!(
                "target path needs at least 2 points, got {}",
                points.len()
            )));
        }
        for pair in points.windows(2) {
            if pair[0].x_mm == pair[1].x_mm && pair[0].y_mm == pair[1].y_mm {
                return Err(Error::Config(
                    "target path has consecutive points with identical position".into(),
                ));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[PathPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> &PathPoint {
        self.points.last().expect("path has >= 2 points")
    }

    /// Write as CSV with header `x_mm,y_mm,theta_rad`.
    pub fn write_csv<P: AsRef<FsPath>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x_mm", "y_mm", "theta_rad"])?;
        for p in &self.points {
            w.write_record(&[
                p.x_mm.to_string(),
                p.y_mm.to_string(),
                p.theta_rad.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a CSV written by [`TargetPath::write_csv`].
    pub fn read_csv<P: AsRef<FsPath>>(path: P) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::Dim(format!(
                    "path row has {} fields, expected 3",
                    rec.len()
                )));
            }
            let parse = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Domain(format!("bad float {:?} in path CSV: {e}", &rec[i])))
            };
            points.push(PathPoint::new(parse(0)?, parse(1)?, parse(2)?));
        }
        Self::new(points)
    }
}

/// Cubic Bezier curve over four control points, in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicBezier {
    pub ctrl: [(f64, f64); 4],
}

impl CubicBezier {
    pub fn new(ctrl: [(f64, f64); 4]) -> Self {
        Self { ctrl }
    }

    /// Evaluate the curve at `t` in [0, 1] (Bernstein form).
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        check_param(t)?;
        let u = 1.0 - t;
        let b0 = u * u * u;
        let b1 = 3.0 * u * u * t;
        let b2 = 3.0 * u * t * t;
        let b3 = t * t * t;
        let [p0, p1, p2, p3] = self.ctrl;
        Ok((
            b0 * p0.0 + b1 * p1.0 + b2 * p2.0 + b3 * p3.0,
            b0 * p0.1 + b1 * p1.1 + b2 * p2.1 + b3 * p3.1,
        ))
    }

    /// Analytic derivative at `t`.
    pub fn derivative(&self, t: f64) -> Result<(f64, f64)> {
        check_param(t)?;
        let u = 1.0 - t;
        let [p0, p1, p2, p3] = self.ctrl;
        let dx =
            3.0 * u * u * (p1.0 - p0.0) + 6.0 * u * t * (p2.0 - p1.0) + 3.0 * t * t * (p3.0 - p2.0);
        let dy =
            3.0 * u * u * (p1.1 - p0.1) + 6.0 * u * t * (p2.1 - p1.1) + 3.0 * t * t * (p3.1 - p2.1);
        Ok((dx, dy))
    }

    /// Heading of the tangent vector at `t`, wrapped to (-pi, pi].
    pub fn tangent_angle(&self, t: f64) -> Result<f64> {
        let (dx, dy) = self.derivative(t)?;
        if dx == 0.0 && dy == 0.0 {
            return Err(Error::DegenerateCurve(format!(
                "zero derivative at t = {t}; control polygon is degenerate"
            )));
        }
        Ok(wrap(dy.atan2(dx)))
    }

    /// Sample `n >= 2` points at uniform parameter spacing, with tangent
    /// headings.
    pub fn discretize(&self, n: usize) -> Result<TargetPath> {
        if n < 2 {
            return Err(Error::Config(format!(
                "discretization needs n >= 2, got {n}"
            )));
        }
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            let (x, y) = self.eval(t)?;
            let theta = self.tangent_angle(t)?;
            points.push(PathPoint {
                x_mm: x,
                y_mm: y,
                theta_rad: theta,
            });
        }
        TargetPath::new(points)
    }
}

fn check_param(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!(
            "Bezier parameter t = {t} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Build a smooth 90-degree right turn starting at `start`.
///
/// The curve leaves `start` along its heading and ends heading
/// `start.theta - pi/2`. Control arms of length `radius_scale` sit on the
/// entry and exit tangents; the turn corner is `2 * radius_scale` ahead
/// of the start, and the endpoint the same distance beyond the corner
/// along the exit direction.
pub fn make_right_turn_path(
    start: PathPoint,
    radius_scale_mm: f64,
    n: usize,
) -> Result<TargetPath> {
    if radius_scale_mm <= 0.0 || !radius_scale_mm.is_finite() {
        return Err(Error::Config(format!(
            "radius_scale must be positive and finite, got {radius_scale_mm}"
        )));
    }
    let (sin_in, cos_in) = start.theta_rad.sin_cos();
    let theta_out = wrap(start.theta_rad - std::f64::consts::FRAC_PI_2);
    let (sin_out, cos_out) = theta_out.sin_cos();

    let p0 = (start.x_mm, start.y_mm);
    let corner = (
        p0.0 + 2.0 * radius_scale_mm * cos_in,
        p0.1 + 2.0 * radius_scale_mm * sin_in,
    );
    let p3 = (
        corner.0 + 2.0 * radius_scale_mm * cos_out,
        corner.1 + 2.0 * radius_scale_mm * sin_out,
    );
    let p1 = (
        p0.0 + radius_scale_mm * cos_in,
        p0.1 + radius_scale_mm * sin_in,
    );
    let p2 = (
        p3.0 - radius_scale_mm * cos_out,
        p3.1 - radius_scale_mm * sin_out,
    );

    CubicBezier::new([p0, p1, p2, p3]).discretize(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Independent De Casteljau evaluation used as the oracle for the
    /// Bernstein-form implementation.
    fn de_casteljau(ctrl: [(f64, f64); 4], t: f64) -> (f64, f64) {
        let mut pts = ctrl.to_vec();
        while pts.len() > 1 {
            pts = pts
                .windows(2)
                .map(|w| {
                    (
                        (1.0 - t) * w[0].0 + t * w[1].0,
                        (1.0 - t) * w[0].1 + t * w[1].1,
                    )
                })
                .collect();
        }
        pts[0]
    }

    const CTRL: [(f64, f64); 4] = [(0.0, 0.0), (100.0, 0.0), (200.0, 100.0), (200.0, 200.0)];

    #[test]
    fn eval_endpoints_interpolate() {
        let b = CubicBezier::new(CTRL);
        assert_eq!(b.eval(0.0).unwrap(), CTRL[0]);
        assert_eq!(b.eval(1.0).unwrap(), CTRL[3]);
    }

    #[test]
    fn eval_matches_de_casteljau_at_half() {
        let b = CubicBezier::new(CTRL);
        let got = b.eval(0.5).unwrap();
        let want = de_casteljau(CTRL, 0.5);
        // Hand check: level reduction gives (137.5, 62.5).
        assert_abs_diff_eq!(want.0, 137.5, epsilon = 1e-12);
        assert_abs_diff_eq!(want.1, 62.5, epsilon = 1e-12);
        assert_abs_diff_eq!(got.0, want.0, epsilon = 1e-10);
        assert_abs_diff_eq!(got.1, want.1, epsilon = 1e-10);
    }

    #[test]
    fn eval_rejects_out_of_range_parameter() {
        let b = CubicBezier::new(CTRL);
        assert!(b.eval(-0.01).is_err());
        assert!(b.eval(1.01).is_err());
    }

    #[test]
    fn tangent_straight_line_along_x() {
        let b = CubicBezier::new([(0.0, 0.0), (10.0, 0.0), (20.0, 0.0), (30.0, 0.0)]);
        for &t in &[0.0, 0.3, 0.7, 1.0] {
            assert_abs_diff_eq!(b.tangent_angle(t).unwrap(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tangent_straight_line_down() {
        let b = CubicBezier::new([(0.0, 0.0), (0.0, -10.0), (0.0, -20.0), (0.0, -30.0)]);
        assert_abs_diff_eq!(b.tangent_angle(0.5).unwrap(), -FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn tangent_matches_finite_difference() {
        let b = CubicBezier::new(CTRL);
        let t = 0.3;
        let h = 1e-7;
        let (x0, y0) = b.eval(t - h).unwrap();
        let (x1, y1) = b.eval(t + h).unwrap();
        let fd = (y1 - y0).atan2(x1 - x0);
        assert_abs_diff_eq!(b.tangent_angle(t).unwrap(), fd, epsilon = 1e-6);
    }

    #[test]
    fn tangent_degenerate_curve_errors() {
        let b = CubicBezier::new([(5.0, 5.0); 4]);
        assert!(matches!(
            b.tangent_angle(0.5),
            Err(Error::DegenerateCurve(_))
        ));
    }

    #[test]
    fn discretize_two_points_gives_endpoints() {
        let b = CubicBezier::new(CTRL);
        let path = b.discretize(2).unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!((path.points()[0].x_mm, path.points()[0].y_mm), CTRL[0]);
        assert_eq!((path.points()[1].x_mm, path.points()[1].y_mm), CTRL[3]);
    }

    #[test]
    fn discretize_rejects_small_n() {
        let b = CubicBezier::new(CTRL);
        assert!(b.discretize(1).is_err());
    }

    #[test]
    fn right_turn_endpoint_headings() {
        let start = PathPoint::new(100.0, 450.0, 0.0);
        let path = make_right_turn_path(start, 150.0, 200).unwrap();
        assert_eq!(path.len(), 200);
        assert_abs_diff_eq!(path.points()[0].theta_rad, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(path.last().theta_rad, -FRAC_PI_2, epsilon = 1e-9);
        assert_abs_diff_eq!(path.points()[0].x_mm, 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(path.points()[0].y_mm, 450.0, epsilon = 1e-12);
    }

    #[test]
    fn default_scenario_path_stays_in_tank() {
        // Tank is 600 x 600 mm.
        let path = make_right_turn_path(PathPoint::new(100.0, 400.0, 0.0), 150.0, 200).unwrap();
        for p in path.points() {
            assert!(p.x_mm > 0.0 && p.x_mm < 600.0, "x out of tank: {}", p.x_mm);
            assert!(p.y_mm > 0.0 && p.y_mm < 600.0, "y out of tank: {}", p.y_mm);
        }
    }

    #[test]
    fn discretized_spacing_varies_smoothly() {
        let path = make_right_turn_path(PathPoint::new(100.0, 400.0, 0.0), 150.0, 200).unwrap();
        let steps: Vec<f64> = path
            .points()
            .windows(2)
            .map(|w| w[1].distance_to(w[0].x_mm, w[0].y_mm))
            .collect();
        let max = steps.iter().cloned().fold(f64::MIN, f64::max);
        let min = steps.iter().cloned().fold(f64::MAX, f64::min);
        assert!(min > 0.0);
        assert!(max / min < 2.0, "arc-step ratio too large: {}", max / min);
    }

    #[test]
    fn discretized_headings_match_position_differences() {
        let path = make_right_turn_path(PathPoint::new(100.0, 400.0, 0.0), 150.0, 200).unwrap();
        let pts = path.points();
        for i in 1..pts.len() - 1 {
            let fd = (pts[i + 1].y_mm - pts[i - 1].y_mm).atan2(pts[i + 1].x_mm - pts[i - 1].x_mm);
            let diff = wrap(pts[i].theta_rad - fd).abs();
            assert!(diff <= 0.01, "heading off by {diff} rad at {i}");
        }
    }

    #[test]
    fn path_rejects_degenerate_inputs() {
        assert!(TargetPath::new(vec![PathPoint::new(0.0, 0.0, 0.0)]).is_err());
        assert!(TargetPath::new(vec![
            PathPoint::new(0.0, 0.0, 0.0),
            PathPoint::new(0.0, 0.0, 0.1),
        ])
        .is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("path.csv");
        let path = make_right_turn_path(PathPoint::new(100.0, 400.0, 0.0), 150.0, 50).unwrap();
        path.write_csv(&file).unwrap();
        let back = TargetPath::read_csv(&file).unwrap();
        assert_eq!(path, back);
    }

    proptest! {
        /// Endpoint interpolation and tangency for arbitrary non-degenerate
        /// control polygons.
        #[test]
        fn endpoint_tangency(
            x0 in -100.0..100.0f64, y0 in -100.0..100.0f64,
            x1 in -100.0..100.0f64, y1 in -100.0..100.0f64,
            x2 in -100.0..100.0f64, y2 in -100.0..100.0f64,
            x3 in -100.0..100.0f64, y3 in -100.0..100.0f64,
        ) {
            prop_assume!(((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt() > 1e-3);
            prop_assume!(((x3 - x2).powi(2) + (y3 - y2).powi(2)).sqrt() > 1e-3);
            let b = CubicBezier::new([(x0, y0), (x1, y1), (x2, y2), (x3, y3)]);
            let start = b.tangent_angle(0.0).unwrap();
            let end = b.tangent_angle(1.0).unwrap();
            let expect_start = (y1 - y0).atan2(x1 - x0);
            let expect_end = (y3 - y2).atan2(x3 - x2);
            prop_assert!(wrap(start - expect_start).abs() < 1e-9);
            prop_assert!(wrap(end - expect_end).abs() < 1e-9);
            prop_assert!(start > -PI && start <= PI);
        }

        /// Bernstein evaluation equals De Casteljau everywhere.
        #[test]
        fn bernstein_equals_de_casteljau(
            t in 0.0..=1.0f64,
            x1 in -200.0..200.0f64, y1 in -200.0..200.0f64,
            x2 in -200.0..200.0f64, y2 in -200.0..200.0f64,
        ) {
            let ctrl = [(0.0, 0.0), (x1, y1), (x2, y2), (100.0, 100.0)];
            let b = CubicBezier::new(ctrl);
            let got = b.eval(t).unwrap();
            let want = de_casteljau(ctrl, t);
            prop_assert!((got.0 - want.0).abs() < 1e-9);
            prop_assert!((got.1 - want.1).abs() < 1e-9);
        }
    }
}
