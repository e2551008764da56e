//! Exhaustive brute-force metric oracles shared by the metric tests and the
//! acceptance suite.

use pca_seg::metrics::BinaryMask;
use pca_seg::numcore::RngStream;

pub fn random_mask(rng: &mut RngStream, h: usize, w: usize, density: f64) -> BinaryMask {
    BinaryMask::new(h, w, (0..h * w).map(|_| rng.uniform() < density).collect()).unwrap()
}

fn on(m: &BinaryMask, y: isize, x: isize) -> bool {
    let (h, w) = m.dims();
    y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && m.bits()[y as usize * w + x as usize]
}

fn oracle_boundary(m: &BinaryMask) -> Vec<(isize, isize)> {
    let (h, w) = m.dims();
    let mut out = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let nbrs = [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)];
            if on(m, y, x) && nbrs.iter().any(|&(a, b)| !on(m, a, b)) {
                out.push((y, x));
            }
        }
    }
    out
}

fn oracle_directed(a: &[(isize, isize)], b: &[(isize, isize)]) -> Vec<f64> {
    a.iter()
        .map(|&(y, x)| {
            b.iter()
                .map(|&(v, u)| (((y - v).pow(2) + (x - u).pow(2)) as f64).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub struct Oracle {
    pub dsc: f64,
    pub ja: f64,
    pub hd95: f64,
    pub asd: f64,
}

pub fn oracle(p: &BinaryMask, g: &BinaryMask) -> Oracle {
    let (h, w) = p.dims();
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for i in 0..h * w {
        let (a, b) = (p.bits()[i], g.bits()[i]);
        inter += (a && b) as usize;
        np += a as usize;
        ng += b as usize;
    }
    let union = np + ng - inter;
    let dsc = if np + ng == 0 { 1.0 } else { 2.0 * inter as f64 / (np + ng) as f64 };
    let ja = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    let diag = ((h * h + w * w) as f64).sqrt();
    let (hd95, asd) = match (np, ng) {
        (0, 0) => (0.0, 0.0),
        (0, _) | (_, 0) => (diag, diag),
        _ => {
            let (bp, bg) = (oracle_boundary(p), oracle_boundary(g));
            let d1 = oracle_directed(&bp, &bg);
            let d2 = oracle_directed(&bg, &bp);
            let mut all: Vec<f64> = d1.iter().chain(&d2).copied().collect();
            all.sort_by(f64::total_cmp);
            let n = all.len();
            let mut k = 1;
            while 100 * k < 95 * n {
                k += 1;
            }
            let m1 = d1.iter().sum::<f64>() / d1.len() as f64;
            let m2 = d2.iter().sum::<f64>() / d2.len() as f64;
            (all[k - 1], (m1 + m2) / 2.0)
        }
    };
    Oracle { dsc, ja, hd95, asd }
}
