//! Analytic optical flow for procedural scenes, plus the frame-matching
//! oracle that adapts it to the metric suite's (frame, frame) -> flow
//! interface.

use ndarray::{Array2, Array3};

use crate::dataset::scene::{render_frame_over, SceneSpec, TIME_DOMAIN};
use crate::error::{Error, Result};
use crate::img::Image;

/// Dense displacement field between two times. `flow[(y, x, 0)]` is the
/// x-displacement and `flow[(y, x, 1)]` the y-displacement, in pixels, of
/// the foreground object owning the pixel at `t0`; background pixels are
/// zero. `owner` is the owning object index (-1 for background) and
/// `occluded` marks foreground pixels whose advected location is covered
/// by a different, nearer object at `t1`.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub flow: Array3<f64>,
    pub owner: Array2<i32>,
    pub occluded: Array2<bool>,
}

/// Per-pixel displacement from `t0` to `t1` at pixel centers.
pub fn analytic_flow(scene: &SceneSpec, t0: f64, t1: f64) -> Result<FlowField> {
    for t in [t0, t1] {
        if !(TIME_DOMAIN.0..=TIME_DOMAIN.1).contains(&t) {
            return Err(Error::Domain(format!(
                "flow time {t} outside [{}, {}]",
                TIME_DOMAIN.0, TIME_DOMAIN.1
            )));
        }
    }
    let (h, w) = (scene.height, scene.width);
    let mut flow = Array3::zeros((h, w, 2));
    let mut owner = Array2::from_elem((h, w), -1i32);
    let mut occluded = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            if let Some(k) = scene.owner_at(px, py, t0) {
                let d = scene.objects[k].displacement(px, py, t0, t1);
                flow[[y, x, 0]] = d[0];
                flow[[y, x, 1]] = d[1];
                owner[[y, x]] = k as i32;
                occluded[[y, x]] = scene.owner_at(px + d[0], py + d[1], t1) != Some(k);
            }
        }
    }
    Ok(FlowField { flow, owner, occluded })
}

/// Flow oracle over a finite set of candidate frames with known times.
///
/// The metric suite hands the flow function raw frames; this oracle
/// recovers each frame's capture time by nearest-L2 match against the
/// candidates (exact for ground-truth frames and their time reversals,
/// nearest-fit for model outputs), then evaluates the analytic flow
/// between the matched times.
pub struct RenderedFlowOracle {
    scene: SceneSpec,
    times: Vec<f64>,
    candidates: Vec<Image>,
}

impl RenderedFlowOracle {
    /// Builds an oracle from explicit candidate frames (typically a
    /// task's ground-truth targets) and their representative times.
    pub fn from_candidates(
        scene: SceneSpec,
        times: Vec<f64>,
        candidates: Vec<Image>,
    ) -> Result<Self> {
        if times.len() != candidates.len() || times.is_empty() {
            return Err(Error::Config(
                "flow oracle needs one time per candidate frame".into(),
            ));
        }
        scene.validate()?;
        Ok(Self { scene, times, candidates })
    }

    /// Builds an oracle whose candidates are point renders at the given
    /// times.
    pub fn from_renders(scene: SceneSpec, times: Vec<f64>) -> Result<Self> {
        scene.validate()?;
        let bg = scene.background();
        let candidates = times
            .iter()
            .map(|&t| {
                if !(TIME_DOMAIN.0..=TIME_DOMAIN.1).contains(&t) {
                    return Err(Error::Domain(format!("oracle time {t} out of range")));
                }
                Ok(render_frame_over(&scene, t, &bg))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_candidates(scene, times, candidates)
    }

    fn match_time(&self, frame: &Image) -> f64 {
        let mut best = (f64::INFINITY, 0usize);
        for (i, cand) in self.candidates.iter().enumerate() {
            let d: f64 = cand
                .iter()
                .zip(frame.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        self.times[best.1]
    }

    /// The `(frame_a, frame_b) -> flow` closure consumed by the EPE
    /// metric.
    pub fn flow_fn(&self) -> impl Fn(&Image, &Image) -> Array3<f64> + '_ {
        move |a, b| {
            let ta = self.match_time(a);
            let tb = self.match_time(b);
            analytic_flow(&self.scene, ta, tb)
                .expect("matched times are within the render domain")
                .flow
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::scene::{ObjectSpec, Shape};

    fn two_object_scene() -> SceneSpec {
        SceneSpec {
            height: 40,
            width: 40,
            background_seed: 3,
            objects: vec![
                ObjectSpec {
                    shape: Shape::Rectangle,
                    size: 12.0,
                    color: [0.2, 0.6, 0.9],
                    position: [18.0, 20.0],
                    velocity: [4.0, 0.0],
                    angular_velocity: 0.0,
                },
                ObjectSpec {
                    shape: Shape::Disk,
                    size: 10.0,
                    color: [0.9, 0.3, 0.2],
                    position: [24.0, 20.0],
                    velocity: [-3.0, 2.0],
                    angular_velocity: 0.0,
                },
            ],
        }
    }

    #[test]
    fn zero_time_gap_gives_zero_field() {
        let scene = two_object_scene();
        let f = analytic_flow(&scene, 0.25, 0.25).unwrap();
        assert!(f.flow.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disk_flow_is_constant_velocity_displacement() {
        let mut scene = two_object_scene();
        scene.objects.truncate(1);
        scene.objects[0].velocity = [5.0, 0.0];
        let f = analytic_flow(&scene, -0.5, 0.5).unwrap();
        for y in 0..40 {
            for x in 0..40 {
                if f.owner[[y, x]] == 0 {
                    assert_eq!(f.flow[[y, x, 0]], 5.0 * 1.0);
                    assert_eq!(f.flow[[y, x, 1]], 0.0);
                }
            }
        }
    }

    #[test]
    fn overlap_ownership_matches_brute_force_membership() {
        let scene = two_object_scene();
        let t0 = 0.0;
        let f = analytic_flow(&scene, t0, 0.5).unwrap();
        for y in 0..40 {
            for x in 0..40 {
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                // Brute-force membership: later-listed object is nearer.
                let in1 = scene.objects[1].contains(px, py, t0);
                let in0 = scene.objects[0].contains(px, py, t0);
                let expect = if in1 {
                    1
                } else if in0 {
                    0
                } else {
                    -1
                };
                assert_eq!(f.owner[[y, x]], expect, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn composition_on_stable_pixels() {
        // Dyadic velocities and times keep the identity exact in f64.
        let mut scene = two_object_scene();
        scene.objects.truncate(1);
        scene.objects[0].velocity = [3.25, -1.5];
        let (t0, t1, t2) = (-0.5, 0.0, 0.75);
        let f02 = analytic_flow(&scene, t0, t2).unwrap();
        let f01 = analytic_flow(&scene, t0, t1).unwrap();
        for y in 0..40 {
            for x in 0..40 {
                if f02.owner[[y, x]] != 0 || f02.occluded[[y, x]] {
                    continue;
                }
                // Lagrangian composition: the advected point keeps the
                // same owner (single constant-velocity object), so the
                // second leg is the object displacement over [t1, t2].
                let leg2 = scene.objects[0].displacement(
                    x as f64 + 0.5 + f01.flow[[y, x, 0]],
                    y as f64 + 0.5 + f01.flow[[y, x, 1]],
                    t1,
                    t2,
                );
                assert_eq!(f02.flow[[y, x, 0]], f01.flow[[y, x, 0]] + leg2[0]);
                assert_eq!(f02.flow[[y, x, 1]], f01.flow[[y, x, 1]] + leg2[1]);
            }
        }
    }

    #[test]
    fn oracle_matches_rendered_frames_exactly() {
        let scene = two_object_scene();
        let times = vec![-0.25, 0.0, 0.25];
        let oracle = RenderedFlowOracle::from_renders(scene.clone(), times.clone()).unwrap();
        let bg = scene.background();
        let frame = render_frame_over(&scene, 0.25, &bg);
        let f = (oracle.flow_fn())(&frame, &render_frame_over(&scene, -0.25, &bg));
        let direct = analytic_flow(&scene, 0.25, -0.25).unwrap().flow;
        assert_eq!(f, direct);
    }
}
