//! Seeded fixtures shared by the benchmarks under `benches/`.

use oskgeom::codec::Roi;
use oskgeom::dataio::{random_convex_quad, synth_dataset, SynthConfig};
use oskgeom::evalkit::{Detection, GroundTruth};
use oskgeom::geom::{Point2, Quad};
use oskgeom::rng::SplitMix64;

/// Overlapping pairs of random convex quads.
pub fn quad_pairs(seed: u64, n: usize) -> Vec<(Quad, Quad)> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|_| {
            let scale = rng.uniform(10.0, 80.0);
            let c = Point2::new(rng.uniform(0.0, 500.0), rng.uniform(0.0, 500.0));
            let a = random_convex_quad(&mut rng, c, scale);
            let shift = Point2::new(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)) * scale;
            let b = random_convex_quad(&mut rng, c + shift, scale);
            (a, b)
        })
        .collect()
}

/// A random convex quad with its bounding-box ROI.
pub fn instance(seed: u64) -> (Quad, Roi) {
    let mut rng = SplitMix64::new(seed);
    let q = random_convex_quad(&mut rng, Point2::new(400.0, 400.0), 120.0);
    (q, Roi::bounding(&q).expect("valid quad has a positive box"))
}

/// Detections and ground truths of a synthetic scene.
pub fn scene(count: usize) -> (Vec<Detection>, Vec<GroundTruth>) {
    let s = synth_dataset(&SynthConfig {
        count,
        ..SynthConfig::default()
    });
    (
        s.detections,
        oskgeom::dataio::to_ground_truths(&s.ground_truths),
    )
}
