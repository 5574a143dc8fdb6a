//! Exact Euclidean distance transform and hole filling on binary masks.

use std::collections::VecDeque;

/// 1-D squared distance transform of sampled function `f` (lower envelope of
/// parabolas, Felzenszwalb & Huttenlocher). Infinite samples carry no parabola.
fn dt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let sect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k: Option<usize> = None;
    for q in 0..f.len() {
        if f[q].is_infinite() {
            continue;
        }
        let Some(mut top) = k else {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            k = Some(0);
            continue;
        };
        let mut s = sect(q, v[top]);
        while s <= z[top] {
            top -= 1;
            s = sect(q, v[top]);
        }
        top += 1;
        v[top] = q;
        z[top] = s;
        z[top + 1] = f64::INFINITY;
        k = Some(top);
    }
    if k.is_none() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance (in pixels) from every pixel to the nearest `true` pixel
/// of a row-major `height × width` mask. Pixels of the mask get 0; an empty
/// mask yields `+∞` everywhere.
pub fn distance_to(mask: &[bool], height: usize, width: usize) -> Vec<f64> {
    assert_eq!(mask.len(), height * width);
    let n = height.max(width);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut buf_in = vec![0.0f64; n];
    let mut buf_out = vec![0.0f64; n];

    let mut sq: Vec<f64> = mask
        .iter()
        .map(|&m| if m { 0.0 } else { f64::INFINITY })
        .collect();

    for c in 0..width {
        for r in 0..height {
            buf_in[r] = sq[r * width + c];
        }
        dt_1d(&buf_in[..height], &mut buf_out[..height], &mut v, &mut z);
        for r in 0..height {
            sq[r * width + c] = buf_out[r];
        }
    }
    for r in 0..height {
        let row = &mut sq[r * width..(r + 1) * width];
        buf_in[..width].copy_from_slice(row);
        dt_1d(&buf_in[..width], &mut buf_out[..width], &mut v, &mut z);
        row.copy_from_slice(&buf_out[..width]);
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Mask plus every background component not 4-connected to the image border.
pub fn fill_holes(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    assert_eq!(mask.len(), height * width);
    let mut outside = vec![false; mask.len()];
    let mut queue = VecDeque::new();
    let seed = |p: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if !mask[p] && !outside[p] {
            outside[p] = true;
            queue.push_back(p);
        }
    };
    for c in 0..width {
        seed(c, &mut outside, &mut queue);
        seed((height - 1) * width + c, &mut outside, &mut queue);
    }
    for r in 0..height {
        seed(r * width, &mut outside, &mut queue);
        seed(r * width + width - 1, &mut outside, &mut queue);
    }
    while let Some(p) = queue.pop_front() {
        let (r, c) = (p / width, p % width);
        let mut visit = |q: usize| {
            if !mask[q] && !outside[q] {
                outside[q] = true;
                queue.push_back(q);
            }
        };
        if r > 0 {
            visit(p - width);
        }
        if r + 1 < height {
            visit(p + width);
        }
        if c > 0 {
            visit(p - 1);
        }
        if c + 1 < width {
            visit(p + 1);
        }
    }
    outside.into_iter().map(|o| !o).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(mask: &[bool], h: usize, w: usize) -> Vec<f64> {
        (0..h * w)
            .map(|p| {
                let (r, c) = ((p / w) as f64, (p % w) as f64);
                mask.iter()
                    .enumerate()
                    .filter(|(_, &m)| m)
                    .map(|(q, _)| {
                        let (qr, qc) = ((q / w) as f64, (q % w) as f64);
                        ((r - qr).powi(2) + (c - qc).powi(2)).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matches_brute_force(h in 1usize..12, w in 1usize..12, bits in proptest::collection::vec(any::<u8>(), 144)) {
            let mask: Vec<bool> = bits[..h * w].iter().map(|b| b % 5 == 0).collect();
            let fast = distance_to(&mask, h, w);
            let slow = brute(&mask, h, w);
            for (a, b) in fast.iter().zip(&slow) {
                if b.is_infinite() {
                    prop_assert!(a.is_infinite());
                } else {
                    prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
                }
            }
        }
    }

    #[test]
    fn fills_enclosed_hole_only() {
        // 3x3 ring enclosing one pixel
        #[rustfmt::skip]
        let m = [
            0, 0, 0, 0, 0,
            0, 1, 1, 1, 0,
            0, 1, 0, 1, 0,
            0, 1, 1, 1, 0,
            0, 0, 0, 0, 0,
        ];
        let mask: Vec<bool> = m.iter().map(|&v| v == 1).collect();
        let filled = fill_holes(&mask, 5, 5);
        assert!(filled[12]);
        assert_eq!(filled.iter().filter(|&&f| f).count(), 9);
    }
}
