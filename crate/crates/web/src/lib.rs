//! Browser bindings: render a synthetic two-camera scene, show the epipolar
//! line of a clicked point, the tangent envelope of a silhouette, and run a
//! small calibration in the page.

use motionbar::bench::clip_line;
use motionbar::estimator::{Method, RansacConfig};
use motionbar::geometry::{mean_symmetric_distance, Fundamental, HomogPoint, PointPair};
use motionbar::pipeline::{CalibrateOptions, Offline};
use motionbar::silhouette::{analyze_frame, Mask};
use motionbar::synth::{ground_truth_frontier_points, make_scene, FrontierPair, Scene, SceneSpec};
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
    masks: [Vec<Mask>; 2],
    f_gt: Fundamental,
    f_est: Option<Fundamental>,
}

fn js_err(e: impl ToString) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    /// Default scene with camera B at `azimuth_deg` and `frames` frames.
    #[wasm_bindgen(constructor)]
    pub fn new(azimuth_deg: f64, frames: usize) -> Result<Demo, JsError> {
        let spec = SceneSpec { azimuths_deg: vec![0.0, azimuth_deg], frames, ..SceneSpec::default() };
        let scene = make_scene(&spec).map_err(js_err)?;
        let masks = [scene.render_camera(0), scene.render_camera(1)];
        let f_gt = scene.fundamental(0, 1).map_err(js_err)?;
        Ok(Demo { scene, masks, f_gt, f_est: None })
    }

    pub fn width(&self) -> usize {
        self.scene.spec.width
    }

    pub fn height(&self) -> usize {
        self.scene.spec.height
    }

    pub fn frames(&self) -> usize {
        self.scene.frames()
    }

    /// RGBA pixels of one silhouette.
    pub fn rgba(&self, cam: usize, frame: usize) -> Vec<u8> {
        let m = &self.masks[cam.min(1)][frame.min(self.frames() - 1)];
        m.bits().iter().flat_map(|&b| if b { [40, 40, 40, 255] } else { [245, 245, 245, 255] }).collect()
    }

    /// Epipolar line in the other image of pixel (x, y) in camera `cam`, as
    /// clipped segments `[x1, y1, x2, y2]`: ground truth first, then the
    /// estimate when one exists.
    pub fn epipolar_line(&self, cam: usize, x: f64, y: f64) -> Vec<f64> {
        let p = HomogPoint::from_pixel(x, y);
        let (w, h) = (self.width() as f64, self.height() as f64);
        let mut out = Vec::new();
        for f in std::iter::once(&self.f_gt).chain(self.f_est.as_ref()) {
            let l = if cam == 0 { f.line_in_b(&p) } else { f.line_in_a(&p) };
            if let Some(((x1, y1), (x2, y2))) = clip_line(&l, w, h) {
                out.extend([x1, y1, x2, y2]);
            }
        }
        out
    }

    /// Supporting lines of the silhouette hull every `step_deg` degrees, as
    /// `[x1, y1, x2, y2, touch_x, touch_y]` per line.
    pub fn tangents(&self, cam: usize, frame: usize, step_deg: f64) -> Result<Vec<f64>, JsError> {
        let m = &self.masks[cam.min(1)][frame.min(self.frames() - 1)];
        let ft = analyze_frame(m, step_deg).map_err(js_err)?;
        let (w, h) = (self.width() as f64, self.height() as f64);
        let mut out = Vec::new();
        for cl in &ft.lines {
            if let Some(((x1, y1), (x2, y2))) = clip_line(&cl.line, w, h) {
                out.extend([x1, y1, x2, y2, cl.touch.pos.x, cl.touch.pos.y]);
            }
        }
        Ok(out)
    }

    /// Runs the barcode pipeline and returns JSON with the estimate and its
    /// ground-truth error.
    pub fn calibrate(&mut self, seed: u64, hypotheses: usize, angle_step_deg: f64) -> Result<String, JsError> {
        let off = Offline::compute(&self.masks[0], &self.masks[1], angle_step_deg).map_err(js_err)?;
        let opts = CalibrateOptions {
            method: Method::Barcode,
            ransac: RansacConfig { seed, max_hypotheses: hypotheses, ..RansacConfig::default() },
            ..CalibrateOptions::default()
        };
        let cal = off.calibrate(&opts, None).map_err(js_err)?;
        let gt: Vec<PointPair> = ground_truth_frontier_points(&self.masks[0], &self.masks[1], &self.f_gt)
            .map(|v| v.iter().map(FrontierPair::point_pair).collect())
            .unwrap_or_default();
        let error = mean_symmetric_distance(&cal.f, &gt);
        self.f_est = Some(cal.f);
        Ok(serde_json::json!({
            "f": cal.f.row_major(),
            "inliers": cal.inliers,
            "gt_pairs": gt.len(),
            "gt_error_px": error,
        })
        .to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epipolar_line_of_gt_pair_passes_through_partner() {
        let d = Demo::new(60.0, 20).unwrap();
        let seg = d.epipolar_line(0, 300.0, 200.0);
        assert_eq!(seg.len(), 4);
        let rgba = d.rgba(0, 3);
        assert_eq!(rgba.len(), d.width() * d.height() * 4);
        let t = d.tangents(1, 5, 10.0).unwrap();
        assert_eq!(t.len() % 6, 0);
    }
}
