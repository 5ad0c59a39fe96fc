//! Direct-definition oracles, written independently of the library code.

use gammaspot::raster::Grid;
use num_complex::Complex;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Nearest target by linear scan: (distance, index), first index on ties.
pub fn linear_nearest(query: [f64; 2], targets: &[[f64; 2]]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &t) in targets.iter().enumerate() {
        let d = dist(query, t);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best
}

/// Symmetric Chamfer distance as a double loop over both directions.
pub fn brute_chamfer(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let directed = |from: &[[f64; 2]], to: &[[f64; 2]]| -> f64 {
        from.iter()
            .map(|&p| to.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .sum()
    };
    directed(a, b) + directed(b, a)
}

/// 2-d DFT straight from the definition, laid out with the zero frequency at
/// `(w/2, h/2)`.
pub fn naive_centred_dft(image: &Grid<f64>) -> Vec<Complex<f64>> {
    let (w, h) = (image.width, image.height);
    let mut out = vec![Complex::new(0.0, 0.0); w * h];
    for cy in 0..h {
        let fy = (cy + h - h / 2) % h;
        for cx in 0..w {
            let fx = (cx + w - w / 2) % w;
            let mut acc = Complex::new(0.0, 0.0);
            for r in 0..h {
                for c in 0..w {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * ((fx * c) as f64 / w as f64 + (fy * r) as f64 / h as f64);
                    acc += Complex::from_polar(image.at(c, r), phase);
                }
            }
            out[cy * w + cx] = acc;
        }
    }
    out
}
