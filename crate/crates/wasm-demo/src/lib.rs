//! Browser demo: train a small field on an analytic fixture, look at
//! slices of it and extract its surface.
//!
//! Build with `cargo build -p udf-wasm --target wasm32-unknown-unknown
//! --release`, then run `wasm-bindgen --target web --out-dir
//! crates/wasm-demo/www/pkg` on the resulting `.wasm` and serve `www/`.

use std::sync::Mutex;

use udf_core::field::{Architecture, DistanceField};
use udf_core::fixtures::AnalyticShape;
use udf_core::geometry::{PointCloud, Vec3};
use udf_core::mesher::{self, MeshOptions};
use udf_core::trainer::{TrainConfig, Trainer};
use udf_core::{Error, Result};
use wasm_bindgen::prelude::*;

/// Points per fixture cloud.
pub const CLOUD_SIZE: usize = 2000;
/// Half-width of the square shown by [`DemoState::slice`].
pub const VIEW_HALF_WIDTH: f64 = 0.55;
const MAX_RESOLUTION: usize = 96;

/// One cloud per shape, created on first use and kept for the life of
/// the page so trainers can borrow it.
fn cloud_for(shape: &AnalyticShape) -> Result<&'static PointCloud> {
    static CACHE: Mutex<Vec<(&'static str, &'static PointCloud)>> = Mutex::new(Vec::new());
    let mut cache = CACHE.lock().unwrap_or_else(|e| e.into_inner());
    if let Some((_, c)) = cache.iter().find(|(n, _)| *n == shape.name()) {
        return Ok(c);
    }
    let cloud: &'static PointCloud = Box::leak(Box::new(shape.sample_surface(CLOUD_SIZE, 1)?));
    cache.push((shape.name(), cloud));
    Ok(cloud)
}

pub fn demo_config(seed: u64) -> TrainConfig {
    TrainConfig {
        iterations: usize::MAX,
        batch_size: 128,
        dist_subsample: 128,
        architecture: Architecture {
            skip_at: None,
            ..Architecture::new(32, 3)
        },
        trace_every: usize::MAX,
        resample_every: 200,
        seed,
        ..TrainConfig::default()
    }
}

/// Everything the page can do, without the JavaScript glue.
pub struct DemoState {
    shape: AnalyticShape,
    cloud: &'static PointCloud,
    trainer: Trainer<'static>,
    losses: Vec<f64>,
}

impl DemoState {
    pub fn new(shape: &str, seed: u64) -> Result<Self> {
        let shape: AnalyticShape = shape.parse()?;
        let cloud = cloud_for(&shape)?;
        Ok(DemoState {
            shape,
            cloud,
            trainer: Trainer::new(cloud, demo_config(seed))?,
            losses: Vec::new(),
        })
    }

    /// Run `steps` optimization steps; returns the last total loss.
    pub fn train(&mut self, steps: usize) -> Result<f64> {
        for _ in 0..steps {
            let b = self.trainer.step()?;
            self.losses.push(b.total);
        }
        self.losses
            .last()
            .copied()
            .ok_or_else(|| Error::InvalidArgument("no steps taken yet".into()))
    }

    pub fn iteration(&self) -> usize {
        self.trainer.iteration()
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn points(&self) -> &[Vec3] {
        self.cloud.points()
    }

    fn field(&self, exact: bool) -> &dyn DistanceField {
        if exact {
            &self.shape
        } else {
            self.trainer.field()
        }
    }

    /// Field values on a `res × res` grid in the plane `axis = offset`,
    /// row-major with the first remaining axis varying fastest.
    pub fn slice(&self, axis: usize, offset: f64, res: usize, exact: bool) -> Result<Vec<f64>> {
        if axis > 2 {
            return Err(Error::InvalidArgument(format!("axis must be 0, 1 or 2, got {axis}")));
        }
        if !(2..=512).contains(&res) {
            return Err(Error::InvalidArgument(format!("slice resolution {res} outside 2..=512")));
        }
        let (u, v) = [(1, 2), (0, 2), (0, 1)][axis];
        let step = 2.0 * VIEW_HALF_WIDTH / (res - 1) as f64;
        let mut pts = Vec::with_capacity(res * res);
        for j in 0..res {
            for i in 0..res {
                let mut c = [0.0; 3];
                c[axis] = offset;
                c[u] = -VIEW_HALF_WIDTH + i as f64 * step;
                c[v] = VIEW_HALF_WIDTH - j as f64 * step;
                pts.push(Vec3::new(c[0], c[1], c[2]));
            }
        }
        Ok(self.field(exact).distances(&pts))
    }

    /// Triangle soup: nine coordinates per triangle.
    pub fn mesh(&self, res: usize, exact: bool) -> Result<Vec<f64>> {
        if res > MAX_RESOLUTION {
            return Err(Error::InvalidArgument(format!(
                "resolution {res} above the demo limit {MAX_RESOLUTION}"
            )));
        }
        let opts = MeshOptions {
            threads: 1,
            ..MeshOptions::new(res)
        };
        let mesh = mesher::extract(self.field(exact), &opts)?.mesh;
        let mut out = Vec::with_capacity(9 * mesh.triangles.len());
        for t in 0..mesh.triangles.len() {
            for p in mesh.triangle(t) {
                out.extend([p.x, p.y, p.z]);
            }
        }
        Ok(out)
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_f32(v: impl IntoIterator<Item = f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Names accepted by the `Demo` constructor, comma separated.
#[wasm_bindgen]
pub fn shape_names() -> String {
    AnalyticShape::NAMES.join(",")
}

#[wasm_bindgen]
pub struct Demo(DemoState);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(shape: &str, seed: u32) -> std::result::Result<Demo, JsError> {
        DemoState::new(shape, seed as u64).map(Demo).map_err(js)
    }

    pub fn train(&mut self, steps: u32) -> std::result::Result<f64, JsError> {
        self.0.train(steps as usize).map_err(js)
    }

    pub fn iteration(&self) -> u32 {
        self.0.iteration() as u32
    }

    pub fn losses(&self) -> Vec<f64> {
        self.0.losses().to_vec()
    }

    /// Cloud coordinates, three per point.
    pub fn points(&self) -> Vec<f32> {
        to_f32(self.0.points().iter().flat_map(|p| [p.x, p.y, p.z]))
    }

    pub fn slice(&self, axis: u32, offset: f64, res: u32, exact: bool) -> std::result::Result<Vec<f32>, JsError> {
        self.0.slice(axis as usize, offset, res as usize, exact).map(to_f32).map_err(js)
    }

    pub fn mesh(&self, res: u32, exact: bool) -> std::result::Result<Vec<f32>, JsError> {
        self.0.mesh(res as usize, exact).map(to_f32).map_err(js)
    }
}
