//! Forward pass with activation cache, and its reverse-mode counterpart.

use super::{cast, EmbeddingNetParams, Scalar};
use crate::error::{Error, Result};

/// Network output, length `embedding_dim`.
pub type Embedding<T = f32> = Vec<T>;

pub(crate) struct BlockCache<T> {
    /// Pooled activations, `channels × pooled_len`.
    pub out: Vec<T>,
    /// Conv-output position that won each pooling window.
    pub argmax: Vec<u32>,
}

pub(crate) struct ForwardCache<'a, T> {
    pub input: &'a [T],
    pub blocks: Vec<BlockCache<T>>,
    pub pooled: Vec<T>,
    pub norm: T,
    pub output: Vec<T>,
}

fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

fn check_finite<T: Scalar>(v: &[T], layer: impl FnOnce() -> String) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer: layer() })
    }
}

pub(crate) fn forward_cached<'a, T: Scalar>(
    params: &EmbeddingNetParams<T>,
    input: &'a [T],
) -> Result<ForwardCache<'a, T>> {
    let arch = &params.arch;
    let expected = arch.input_channels * arch.input_len;
    if input.len() != expected {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", arch.input_channels, arch.input_len),
            got: format!("{} values", input.len()),
        });
    }
    let shapes = arch.shapes();
    let mut blocks: Vec<BlockCache<T>> = Vec::with_capacity(arch.blocks.len());
    let mut conv_buf: Vec<T> = Vec::new();

    for (i, b) in arch.blocks.iter().enumerate() {
        let (in_ch, in_len) = shapes[i];
        let x: &[T] = if i == 0 { input } else { &blocks[i - 1].out };
        let conv_len = in_len + 1 - b.kernel;
        let (w, bias) = params.conv(i);

        conv_buf.clear();
        conv_buf.resize(b.out_channels * conv_len, T::zero());
        for o in 0..b.out_channels {
            let y = &mut conv_buf[o * conv_len..(o + 1) * conv_len];
            y.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..in_ch {
                let xc = &x[c * in_len..(c + 1) * in_len];
                for k in 0..b.kernel {
                    axpy(y, w[(o * in_ch + c) * b.kernel + k], &xc[k..k + conv_len]);
                }
            }
        }

        check_finite(&conv_buf, || format!("conv{i}"))?;

        let pooled_len = conv_len / b.pool;
        let mut out = Vec::with_capacity(b.out_channels * pooled_len);
        let mut argmax = Vec::with_capacity(b.out_channels * pooled_len);
        for o in 0..b.out_channels {
            let y = &conv_buf[o * conv_len..(o + 1) * conv_len];
            for j in 0..pooled_len {
                let win = &y[j * b.pool..(j + 1) * b.pool];
                let mut best = 0;
                for (k, &v) in win.iter().enumerate() {
                    if v > win[best] {
                        best = k;
                    }
                }
                // relu(max) == max(relu)
                out.push(win[best].max(T::zero()));
                argmax.push((j * b.pool + best) as u32);
            }
        }
        blocks.push(BlockCache { out, argmax });
    }

    let (ch, len) = *shapes.last().unwrap();
    let last: &[T] = blocks.last().map_or(input, |b| &b.out);
    let inv_len: T = cast(1.0 / len as f64);
    let pooled: Vec<T> = (0..ch)
        .map(|c| last[c * len..(c + 1) * len].iter().copied().sum::<T>() * inv_len)
        .collect();

    let (dw, db) = params.dense();
    let dim = arch.embedding_dim;
    let pre_norm: Vec<T> = (0..dim)
        .map(|r| db[r] + dw[r * ch..(r + 1) * ch].iter().zip(&pooled).map(|(&a, &b)| a * b).sum::<T>())
        .collect();
    check_finite(&pre_norm, || "dense".into())?;

    let norm = pre_norm.iter().map(|&v| v * v).sum::<T>().sqrt();
    let output = if !arch.l2_normalize_output {
        pre_norm
    } else if norm > T::zero() {
        pre_norm.iter().map(|&v| v / norm).collect()
    } else {
        // normalize(0) := e1
        let mut e = vec![T::zero(); dim];
        e[0] = T::one();
        e
    };

    Ok(ForwardCache {
        input,
        blocks,
        pooled,
        norm,
        output,
    })
}

/// Embeds one `input_channels × input_len` window (row-major).
pub fn forward<T: Scalar>(params: &EmbeddingNetParams<T>, input: &[T]) -> Result<Embedding<T>> {
    Ok(forward_cached(params, input)?.output)
}

/// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
pub(crate) fn backward<T: Scalar>(
    params: &EmbeddingNetParams<T>,
    cache: &ForwardCache<'_, T>,
    d_output: &[T],
    grads: &mut EmbeddingNetParams<T>,
) {
    let arch = &params.arch;
    let dim = arch.embedding_dim;
    let shapes = arch.shapes();
    let n_blocks = arch.blocks.len();

    let d_pre: Vec<T> = if !arch.l2_normalize_output {
        d_output.to_vec()
    } else if cache.norm > T::zero() {
        let proj = cache.output.iter().zip(d_output).map(|(&a, &b)| a * b).sum::<T>();
        d_output
            .iter()
            .zip(&cache.output)
            .map(|(&g, &v)| (g - v * proj) / cache.norm)
            .collect()
    } else {
        vec![T::zero(); dim]
    };

    let (ch, len) = *shapes.last().unwrap();
    let (dw, _) = params.dense();
    let dense_w_off = params.tensor_offset(2 * n_blocks);
    let dense_b_off = params.tensor_offset(2 * n_blocks + 1);
    let mut d_pooled = vec![T::zero(); ch];
    for r in 0..dim {
        let g = d_pre[r];
        if g == T::zero() {
            continue;
        }
        grads.values[dense_b_off + r] = grads.values[dense_b_off + r] + g;
        let gw = &mut grads.values[dense_w_off + r * ch..dense_w_off + (r + 1) * ch];
        axpy(gw, g, &cache.pooled);
        axpy(&mut d_pooled, g, &dw[r * ch..(r + 1) * ch]);
    }

    // gradient w.r.t. the last block's pooled output (global average)
    let inv_len: T = cast(1.0 / len as f64);
    let mut d_out: Vec<T> = d_pooled
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv_len, len))
        .collect();

    for i in (0..n_blocks).rev() {
        let b = arch.blocks[i];
        let (in_ch, in_len) = shapes[i];
        let pooled_len = shapes[i + 1].1;
        let x: &[T] = if i == 0 { cache.input } else { &cache.blocks[i - 1].out };
        let block = &cache.blocks[i];
        let (w, _) = params.conv(i);
        let w_off = params.tensor_offset(2 * i);
        let b_off = params.tensor_offset(2 * i + 1);
        let need_dx = i > 0;
        let mut d_in = if need_dx { vec![T::zero(); in_ch * in_len] } else { Vec::new() };

        for o in 0..b.out_channels {
            for j in 0..pooled_len {
                let idx = o * pooled_len + j;
                // relu gate: the pooled value is positive iff the winning conv output was
                if block.out[idx] <= T::zero() {
                    continue;
                }
                let g = d_out[idx];
                if g == T::zero() {
                    continue;
                }
                let t = block.argmax[idx] as usize;
                grads.values[b_off + o] = grads.values[b_off + o] + g;
                for c in 0..in_ch {
                    let xs = &x[c * in_len + t..c * in_len + t + b.kernel];
                    let wrow = (o * in_ch + c) * b.kernel;
                    let gw = &mut grads.values[w_off + wrow..w_off + wrow + b.kernel];
                    axpy(gw, g, xs);
                    if need_dx {
                        let dx = &mut d_in[c * in_len + t..c * in_len + t + b.kernel];
                        axpy(dx, g, &w[wrow..wrow + b.kernel]);
                    }
                }
            }
        }
        d_out = d_in;
    }
}

#[cfg(test)]
mod tests {
    use super::super::{init_params, ArchConfig};
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_input(n: usize, seed: u64) -> Vec<f32> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn output_is_unit_norm() {
        let arch = ArchConfig::default();
        let p = init_params::<f32>(&arch, 3).unwrap();
        for s in 0..5 {
            let e = forward(&p, &random_input(4 * 2500, s)).unwrap();
            let n: f32 = e.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn zero_input_maps_to_e1() {
        let arch = ArchConfig::default();
        let p = init_params::<f64>(&arch, 3).unwrap();
        let zeros = vec![0.0; 4 * 2500];
        let cache = forward_cached(&p, &zeros).unwrap();
        assert_eq!(cache.norm, 0.0);
        assert_eq!(cache.output[0], 1.0);
        assert!(cache.output[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_scaling_leaves_embedding_unchanged() {
        let arch = ArchConfig::default();
        let p = init_params::<f64>(&arch, 4).unwrap();
        let mut q = p.clone();
        for v in q.tensor_mut("dense.weight").unwrap() {
            *v *= 2.0;
        }
        let x: Vec<f64> = random_input(4 * 2500, 8).into_iter().map(f64::from).collect();
        let a = forward(&p, &x).unwrap();
        let b = forward(&q, &x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = init_params::<f32>(&ArchConfig::default(), 1).unwrap();
        assert!(matches!(forward(&p, &[0.0; 10]), Err(Error::ShapeMismatch { .. })));
        let mut bad = vec![0.0f32; 4 * 2500];
        bad[17] = f32::NAN;
        assert!(matches!(forward(&p, &bad), Err(Error::NonFinite { .. })));
    }
}
