//! Seeded workload generators shared by the benchmarks.

use memforge::{EdgeKey, MemoryBank};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Evidence list of `m` items with `d`-dimensional embeddings.
pub fn evidence(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Vec<(f64, Vec<f64>)> {
    (0..m)
        .map(|_| (rng.gen_range(0.5..=1.0), (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect()
}

/// Bank of `n` unit rows in dimension `d`.
pub fn unit_bank(rng: &mut ChaCha8Rng, n: usize, d: usize) -> MemoryBank {
    let mut m = Array2::<f64>::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0));
    for mut row in m.outer_iter_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    let provenance = (0..n).map(|i| EdgeKey::new(format!("s{i}"), "INDICATES", format!("o{i}"))).collect();
    MemoryBank::from_parts(m, provenance, "bench".into()).expect("consistent parts")
}

/// `t` random token rows.
pub fn tokens(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<Vec<f64>> {
    (0..t).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// Short abstract-like sentences for extraction and hashing benchmarks.
pub fn abstracts(rng: &mut ChaCha8Rng, count: usize) -> Vec<String> {
    const WORDS: [&str; 12] = [
        "glioma", "necrosis", "atypia", "mitoses", "stroma", "fibrosis", "nuclei", "vascular", "infiltrate", "grade",
        "carcinoma", "lesion",
    ];
    const LINKS: [&str; 3] = ["shows", "is associated with", "indicates"];
    (0..count)
        .map(|_| {
            let mut pick = || WORDS[rng.gen_range(0..WORDS.len())];
            let (a, b, c, d) = (pick(), pick(), pick(), pick());
            let link = LINKS[rng.gen_range(0..LINKS.len())];
            format!("{a} {b} {link} {c} {d}. Additional context about {a} and {d}.")
        })
        .collect()
}
