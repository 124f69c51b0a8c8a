//! Fit one analytic fixture and print reconstruction, normal and
//! upsampling quality against the closed-form surface.
//!
//!     cargo run --release -p udf-core --example fixture_report -- sphere 20000 [KEY=VALUE ...]

use std::time::Instant;

use udf_core::applications::{estimate_normals, upsample, UpsampleConfig};
use udf_core::field::DistanceField;
use udf_core::fixtures::AnalyticShape;
use udf_core::mesher::{self, MeshOptions};
use udf_core::metrics;
use udf_core::trainer::{fit_with_progress, training_diagnostics, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let shape: AnalyticShape = args.get(1).map_or("sphere", String::as_str).parse().unwrap();
    let mut cfg = TrainConfig::fixture();
    if let Some(n) = args.get(2) {
        cfg.iterations = n.parse().unwrap();
    }
    for kv in args.iter().skip(3) {
        let (k, v) = kv.split_once('=').expect("overrides are KEY=VALUE");
        cfg.set(k, v).unwrap();
    }
    let cloud = shape.sample_surface(10_000, 1).unwrap();
    let held_out = shape.sample_surface(10_000, 2).unwrap();
    let start = Instant::now();
    let every = (cfg.iterations / 10).max(1);
    let (field, trace) = fit_with_progress(&cloud, &cfg, |i, b| {
        if i % every == 0 {
            println!(
                "{i:6} {:7.1}s total {:.5} cd {:.5} proj {:.4} dist {:.5} orth {:.4}",
                start.elapsed().as_secs_f64(),
                b.total,
                b.cd,
                b.proj,
                b.dist,
                b.orth
            );
        }
    })
    .unwrap();
    let d = field.distances(held_out.points());
    println!("held-out mean |f|  {:.5}", d.iter().sum::<f64>() / d.len() as f64);

    let mesh = mesher::extract(&field, &MeshOptions::new(128)).unwrap().mesh;
    if mesh.is_empty() {
        println!("mesh is empty");
        return;
    }
    let samples = metrics::sample_mesh(&mesh, 20_000, 3).unwrap();
    let to_shape = shape.distances(samples.points());
    let p2f = metrics::p2f(held_out.points(), &mesh).unwrap();
    println!(
        "mesh: {} triangles, {} components, {} boundary edges, chamfer-L1 {:.5}",
        mesh.triangles.len(),
        mesh.connected_components(),
        mesh.boundary_edges().len(),
        0.5 * (to_shape.iter().sum::<f64>() / to_shape.len() as f64 + p2f)
    );

    let diag = training_diagnostics(&trace, &field, &cloud, 5).unwrap();
    println!("parallel fraction  {:?}", diag.parallelism.fraction);

    let normals = estimate_normals(&field, &cloud);
    let truth: Vec<_> = cloud.normals().unwrap().to_vec();
    println!("normal RMSE        {:.3} deg", normals.rmse_against(&truth).unwrap());

    match upsample(&field, &cloud, &UpsampleConfig::default(), 4) {
        Ok(up) => {
            let d = shape.distances(up.cloud.points());
            println!("upsample mean p2s  {:.5}", d.iter().sum::<f64>() / d.len() as f64);
        }
        Err(e) => println!("upsample failed: {e}"),
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
}
