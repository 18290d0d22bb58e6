use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Edge, EdgeKind, KernelParams, LayerFormat, Vertex, Window};
use crate::rng::seeded;
use crate::tensor::DummySpec;

/// Inclusive ranges for the random generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomConstraints {
    pub vertices: (usize, usize),
    pub in_edges: (usize, usize),
    pub out_edges: (usize, usize),
    pub rank_edges: (usize, usize),
    pub in_dim: (usize, usize),
    pub out_dim: (usize, usize),
    pub rank_dim: (usize, usize),
    pub kernel: Option<KernelParams>,
    pub phi: usize,
}

impl Default for RandomConstraints {
    fn default() -> Self {
        Self {
            vertices: (4, 8),
            in_edges: (2, 3),
            out_edges: (2, 3),
            rank_edges: (0, 6),
            in_dim: (2, 4),
            out_dim: (2, 4),
            rank_dim: (2, 4),
            kernel: Some(KernelParams::default()),
            phi: 1,
        }
    }
}

/// Random layer format; draws again until every weight vertex is covered.
///
/// Constraints whose edges cannot cover the largest vertex count make the
/// retry loop spin; the default ranges always leave enough endpoints.
pub fn random_format(seed: u64, c: &RandomConstraints) -> LayerFormat {
    assert!(
        c.vertices.0 >= 1 && c.vertices.0 <= c.vertices.1,
        "vertex range {:?}",
        c.vertices
    );
    assert!(c.in_edges.0 >= 1 && c.out_edges.0 >= 1, "need input and output edges");
    let mut rng = seeded(seed);
    let range = |rng: &mut crate::rng::Rng, (lo, hi): (usize, usize)| rng.random_range(lo..=hi);
    loop {
        let n = range(&mut rng, c.vertices);
        let weight = |i: usize| format!("w{i}");
        let mut vertices = vec![Vertex::input("x")];
        vertices.extend((0..n).map(|i| Vertex::weight(&weight(i))));
        let mut edges = Vec::new();

        for t in 0..range(&mut rng, c.in_edges) {
            let v = weight(rng.random_range(0..n));
            let dim = range(&mut rng, c.in_dim);
            edges.push(Edge::new(&format!("i{t}"), dim, &["x", &v], EdgeKind::InputChannel));
        }
        if let Some(k) = &c.kernel {
            let spec = DummySpec::new(k.input_len, k.size, k.stride, k.padding).expect("valid kernel constraint");
            let v = weight(rng.random_range(0..n));
            let names: &[&str] = if k.spatial == 1 { &["k"] } else { &["kh", "kw"] };
            for name in names {
                edges.push(Edge::new(
                    name,
                    k.size,
                    &["x", &v],
                    EdgeKind::KernelWindow(Window::Forward(spec)),
                ));
            }
        }
        if n >= 2 {
            for t in 0..range(&mut rng, c.rank_edges) {
                let a = rng.random_range(0..n);
                let b = (a + rng.random_range(1..n)) % n;
                let dim = range(&mut rng, c.rank_dim);
                edges.push(Edge::new(
                    &format!("r{t}"),
                    dim,
                    &[&weight(a), &weight(b)],
                    EdgeKind::Rank,
                ));
            }
        }
        for t in 0..range(&mut rng, c.out_edges) {
            let v = weight(rng.random_range(0..n));
            let dim = range(&mut rng, c.out_dim);
            edges.push(Edge::new(&format!("o{t}"), dim, &[&v], EdgeKind::OutputChannel));
        }
        if let Ok(f) = LayerFormat::new(vertices, edges, c.phi) {
            return f;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let c = RandomConstraints::default();
        assert_eq!(random_format(5, &c), random_format(5, &c));
        assert_ne!(random_format(5, &c), random_format(6, &c));
    }

    #[test]
    fn sweep_is_valid_and_covers_vertex_counts() {
        let c = RandomConstraints::default();
        let mut seen = [0usize; 9];
        for seed in 0..1000 {
            let f = random_format(seed, &c);
            f.validate().unwrap();
            let n = f.weight_count();
            assert!((4..=8).contains(&n));
            assert!((2..=3).contains(&f.input_channels().count()));
            assert!((2..=3).contains(&f.output_channels().count()));
            seen[n] += 1;
        }
        assert!(seen[4..=8].iter().all(|&k| k > 0), "{seen:?}");
    }
}
