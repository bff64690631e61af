use ald::embedding::EmbeddingMatrix;
use ald::seed;
use rand::Rng;
use rand_distr::StandardNormal;

fn noise(rng: &mut seed::Rng, scale: f64) -> f64 {
    scale * rng.sample::<f64, _>(StandardNormal)
}

/// Three top groups along orthogonal axes, each with three subgroups.
pub fn planted_hierarchy(seed: u64, per_leaf: usize) -> (EmbeddingMatrix, Vec<(usize, usize)>) {
    let dim = 12;
    let mut rng = seed::rng(seed, "test/hierarchy");
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for top in 0..3 {
        for sub in 0..3 {
            for _ in 0..per_leaf {
                let mut v = vec![0.0f32; dim];
                v[top] = 10.0;
                v[3 + 3 * top + sub] = 4.0;
                for x in v.iter_mut() {
                    *x += noise(&mut rng, 0.05) as f32;
                }
                rows.push(v);
                truth.push((top, sub));
            }
        }
    }
    // Interleave so input order reveals nothing.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let rows: Vec<Vec<f32>> = order.iter().map(|&i| rows[i].clone()).collect();
    let truth = order.iter().map(|&i| truth[i]).collect();
    let ids = (0..rows.len()).map(|i| format!("e{i:04}")).collect();
    (EmbeddingMatrix::from_rows(ids, &rows).unwrap(), truth)
}

