//! Regenerates the synthetic EMB1 fixtures under `tests/fixtures`.
//!
//! Usage: cargo run --example make_fixtures [-- <out-dir>]

use std::f64::consts::PI;
use std::path::PathBuf;

use ood_sentinel::embedding_io::{write_embedding_file, EmbeddingSet};
use ood_sentinel::rng::SplitMix64;

const DIM: usize = 16;
const RADIUS: f64 = 10.0;

struct Normal {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl Normal {
    fn new(seed: u64) -> Self {
        Self {
            rng: SplitMix64::new(seed),
            spare: None,
        }
    }

    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let r = (-2.0 * self.uniform().ln()).sqrt();
        let t = 2.0 * PI * self.uniform();
        self.spare = Some(r * t.sin());
        r * t.cos()
    }
}

/// Isotropic unit-variance cluster around `RADIUS` times the unit vector at
/// `angle_deg` in the plane of the first two axes.
fn cluster(seed: u64, count: usize, angle_deg: f64) -> EmbeddingSet {
    let mut g = Normal::new(seed);
    let a = angle_deg.to_radians();
    let rows: Vec<Vec<f32>> = (0..count)
        .map(|_| {
            let mut row: Vec<f64> = (0..DIM).map(|_| g.sample()).collect();
            row[0] += RADIUS * a.cos();
            row[1] += RADIUS * a.sin();
            row.into_iter().map(|x| x as f32).collect()
        })
        .collect();
    EmbeddingSet::from_rows(&rows).expect("fixture rows")
}

fn prompts(seed: u64, count: usize, toward: usize) -> EmbeddingSet {
    let mut g = Normal::new(seed);
    let rows: Vec<Vec<f32>> = (0..count)
        .map(|_| {
            let mut row: Vec<f64> = (0..DIM).map(|_| 0.3 * g.sample()).collect();
            row[toward] += 1.0;
            row.into_iter().map(|x| x as f32).collect()
        })
        .collect();
    EmbeddingSet::from_rows(&rows).expect("prompt rows")
}

fn main() {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures"));
    std::fs::create_dir_all(&dir).expect("create fixture dir");
    let files = [
        ("id_train.emb", cluster(1, 2000, 0.0)),
        ("id_test.emb", cluster(2, 1000, 0.0)),
        ("ood_rot60.emb", cluster(3, 1000, 60.0)),
        ("ood_rot90.emb", cluster(4, 1000, 90.0)),
        ("prompts_normal.emb", prompts(5, 4, 0)),
        ("prompts_anom.emb", prompts(6, 4, 1)),
    ];
    for (name, set) in &files {
        write_embedding_file(set, dir.join(name)).expect("write fixture");
        println!("{name}: {}x{}", set.count(), set.dim());
    }
}
