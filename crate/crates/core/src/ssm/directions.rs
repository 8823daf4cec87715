use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The four raster orders used to turn an `[H, W, C]` map into sequences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    RowForward,
    RowReverse,
    ColForward,
    ColReverse,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::RowForward,
        Direction::RowReverse,
        Direction::ColForward,
        Direction::ColReverse,
    ];

    /// `order[s]` is the row-major cell index visited at sequence step `s`.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        let col_major = || (0..w).flat_map(move |c| (0..h).map(move |r| r * w + c));
        match self {
            Direction::RowForward => (0..h * w).collect(),
            Direction::RowReverse => (0..h * w).rev().collect(),
            Direction::ColForward => col_major().collect(),
            Direction::ColReverse => {
                let mut v: Vec<usize> = col_major().collect();
                v.reverse();
                v
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionalSequences {
    pub height: usize,
    pub width: usize,
    /// Indexed like [`Direction::ALL`].
    pub orders: [Vec<usize>; 4],
    /// `[H*W, C]` each.
    pub sequences: [Tensor; 4],
}

fn gather(x: &[f32], c: usize, order: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(order.len() * c);
    for &cell in order {
        out.extend_from_slice(&x[cell * c..(cell + 1) * c]);
    }
    out
}

pub fn multi_direction_flatten(x: &Tensor) -> Result<DirectionalSequences> {
    let (h, w, c) = x.dims3()?;
    let orders = Direction::ALL.map(|d| d.order(h, w));
    let sequences = std::array::from_fn(|i| {
        Tensor::new(vec![h * w, c], gather(x.data(), c, &orders[i]))
            .expect("permutation keeps size")
    });
    Ok(DirectionalSequences {
        height: h,
        width: w,
        orders,
        sequences,
    })
}

/// Scatters a sequence produced in `order` back to an `[H, W, C]` map.
pub fn unflatten(seq: &Tensor, order: &[usize], height: usize, width: usize) -> Result<Tensor> {
    let (len, c) = seq.dims2()?;
    if len != order.len() || len != height * width {
        return Err(Error::Dimension(format!(
            "sequence of {len} tokens cannot fill a {height}x{width} map"
        )));
    }
    let mut out = vec![0.0f32; len * c];
    for (s, &cell) in order.iter().enumerate() {
        out[cell * c..(cell + 1) * c].copy_from_slice(&seq.data()[s * c..(s + 1) * c]);
    }
    Tensor::new(vec![height, width, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_orders() {
        let x = Tensor::from_fn(&[2, 2, 1], |i| i as f32);
        let seqs = multi_direction_flatten(&x).unwrap();
        let expect = [[0, 1, 2, 3], [3, 2, 1, 0], [0, 2, 1, 3], [3, 1, 2, 0]];
        for (k, e) in expect.iter().enumerate() {
            assert_eq!(seqs.orders[k], e.to_vec());
            let vals: Vec<f32> = e.iter().map(|&i| i as f32).collect();
            assert_eq!(seqs.sequences[k].data(), &vals[..]);
        }
    }

    #[test]
    fn single_cell_gives_identical_sequences() {
        let x = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let seqs = multi_direction_flatten(&x).unwrap();
        for s in &seqs.sequences {
            assert_eq!(s.data(), x.data());
        }
    }

    proptest! {
        #[test]
        fn orders_are_permutations_and_round_trip(h in 1usize..7, w in 1usize..7, c in 1usize..3) {
            let x = Tensor::from_fn(&[h, w, c], |i| i as f32 * 0.5 - 3.0);
            let seqs = multi_direction_flatten(&x).unwrap();
            for (order, seq) in seqs.orders.iter().zip(&seqs.sequences) {
                let mut seen = vec![false; h * w];
                for &i in order {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
                prop_assert!(seen.iter().all(|&s| s));
                prop_assert_eq!(&unflatten(seq, order, h, w).unwrap(), &x);
            }
        }
    }
}
