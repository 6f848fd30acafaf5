//! Feed-forward Transformer blocks: multi-head self-attention plus a
//! two-layer temporal convolution, each with residual connection and layer
//! normalization. Shared by the encoder and the mel decoder.

use rand_chacha::ChaCha20Rng;

use super::{GraphWeights, ModelConfig, LN_EPS};
use crate::error::{Error, Result};
use crate::tensor::{PadMode, Tape, Tensor, Var};

/// Sinusoidal positional encodings, `[t_len, hidden]`.
pub fn sinusoidal_positions(t_len: usize, hidden: usize) -> Tensor {
    let mut data = vec![0.0; t_len * hidden];
    for pos in 0..t_len {
        for i in 0..hidden {
            let exponent = 2.0 * (i / 2) as f64 / hidden as f64;
            let angle = pos as f64 / 10_000f64.powf(exponent);
            data[pos * hidden + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![t_len, hidden], data).expect("positional encoding shape")
}

/// Zero out masked rows; a no-op (and no tape node) when everything is valid.
fn mask_rows(tape: &mut Tape, x: Var, mask: &[bool]) -> Result<Var> {
    if mask.iter().all(|m| *m) {
        return Ok(x);
    }
    let cols = tape.value(x).cols();
    let mut data = vec![0.0; mask.len() * cols];
    for (t, m) in mask.iter().enumerate() {
        if *m {
            data[t * cols..(t + 1) * cols].fill(1.0);
        }
    }
    let m = tape.constant(Tensor::new(vec![mask.len(), cols], data)?);
    tape.mul(x, m)
}

fn multi_head_attention(
    tape: &mut Tape,
    gw: &mut GraphWeights,
    cfg: &ModelConfig,
    x: Var,
    mask: &[bool],
    prefix: &str,
) -> Result<Var> {
    let t_len = tape.value(x).rows();
    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    // Every query row attends over the valid key positions; masked query
    // rows produce garbage that mask_rows clears afterwards.
    let attn_mask: Option<Vec<bool>> = if mask.iter().all(|m| *m) {
        None
    } else {
        let mut m = vec![false; t_len * t_len];
        for q in 0..t_len {
            for (k, valid) in mask.iter().enumerate() {
                m[q * t_len + k] = *valid;
            }
        }
        Some(m)
    };
    let mut combined: Option<Var> = None;
    for head in 0..cfg.heads {
        let p = format!("{prefix}.attn.{head}");
        let wq = gw.bind(tape, &format!("{p}.wq"))?;
        let wk = gw.bind(tape, &format!("{p}.wk"))?;
        let wv = gw.bind(tape, &format!("{p}.wv"))?;
        let wo = gw.bind(tape, &format!("{p}.wo"))?;
        let bq = gw.bind(tape, &format!("{p}.bq"))?;
        let bk = gw.bind(tape, &format!("{p}.bk"))?;
        let bv = gw.bind(tape, &format!("{p}.bv"))?;

        let q = tape.matmul(x, wq)?;
        let q = tape.bias_add(q, bq)?;
        let k = tape.matmul(x, wk)?;
        let k = tape.bias_add(k, bk)?;
        let v = tape.matmul(x, wv)?;
        let v = tape.bias_add(v, bv)?;

        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores, attn_mask.as_deref())?;
        let ctx = tape.matmul(attn, v)?;
        let out = tape.matmul(ctx, wo)?;
        combined = Some(match combined {
            Some(acc) => tape.add(acc, out)?,
            None => out,
        });
    }
    let bo = gw.bind(tape, &format!("{prefix}.attn.bo"))?;
    tape.bias_add(combined.expect("at least one head"), bo)
}

/// One FFT block: masked self-attention and a 2-layer convolution
/// (kernel sizes from the config, hidden -> filter -> hidden with a ReLU
/// between), each wrapped in dropout, residual and layer norm. Masked rows
/// are zeroed at every stage so padded frames can never leak into valid
/// outputs.
#[allow(clippy::too_many_arguments)]
pub fn fft_block(
    tape: &mut Tape,
    gw: &mut GraphWeights,
    cfg: &ModelConfig,
    x: Var,
    mask: &[bool],
    prefix: &str,
    training: bool,
    rng: &mut ChaCha20Rng,
) -> Result<Var> {
    let t_len = tape.value(x).rows();
    if mask.len() != t_len {
        return Err(Error::Shape(format!(
            "mask has {} entries for {t_len} frames",
            mask.len()
        )));
    }
    if !mask.iter().any(|m| *m) {
        return Err(Error::Config("fft_block mask is all-false".into()));
    }
    let x = mask_rows(tape, x, mask)?;
    let attn = multi_head_attention(tape, gw, cfg, x, mask, prefix)?;
    let attn = tape.dropout(attn, cfg.enc_dec_dropout, training, rng)?;
    let attn = mask_rows(tape, attn, mask)?;
    let res = tape.add(x, attn)?;
    let gamma = gw.bind(tape, &format!("{prefix}.attn_norm.gamma"))?;
    let beta = gw.bind(tape, &format!("{prefix}.attn_norm.beta"))?;
    let h = tape.layer_norm(res, gamma, beta, LN_EPS)?;
    let h = mask_rows(tape, h, mask)?;

    let w1 = gw.bind(tape, &format!("{prefix}.conv1.w"))?;
    let b1 = gw.bind(tape, &format!("{prefix}.conv1.b"))?;
    let w2 = gw.bind(tape, &format!("{prefix}.conv2.w"))?;
    let b2 = gw.bind(tape, &format!("{prefix}.conv2.b"))?;
    let c = tape.conv1d(h, w1, b1, PadMode::Zero)?;
    let c = tape.relu(c);
    let c = tape.conv1d(c, w2, b2, PadMode::Zero)?;
    let c = tape.dropout(c, cfg.enc_dec_dropout, training, rng)?;
    let c = mask_rows(tape, c, mask)?;
    let res2 = tape.add(h, c)?;
    let gamma2 = gw.bind(tape, &format!("{prefix}.conv_norm.gamma"))?;
    let beta2 = gw.bind(tape, &format!("{prefix}.conv_norm.beta"))?;
    let out = tape.layer_norm(res2, gamma2, beta2, LN_EPS)?;
    mask_rows(tape, out, mask)
}

/// Phoneme embedding + positional encoding, then the encoder FFT stack.
pub fn encode(
    tape: &mut Tape,
    gw: &mut GraphWeights,
    cfg: &ModelConfig,
    phoneme_ids: &[usize],
    mask: &[bool],
    training: bool,
    rng: &mut ChaCha20Rng,
) -> Result<Var> {
    let table = gw.bind(tape, "phoneme_embedding")?;
    let emb = tape.gather_rows(table, phoneme_ids)?;
    let pe = tape.constant(sinusoidal_positions(phoneme_ids.len(), cfg.hidden));
    let mut h = tape.add(emb, pe)?;
    for l in 0..cfg.encoder_layers {
        h = fft_block(tape, gw, cfg, h, mask, &format!("encoder.{l}"), training, rng)?;
    }
    Ok(h)
}

/// Positional encoding + decoder FFT stack + linear projection to mel bins.
pub fn decode_mel(
    tape: &mut Tape,
    gw: &mut GraphWeights,
    cfg: &ModelConfig,
    hidden: Var,
    mask: &[bool],
    training: bool,
    rng: &mut ChaCha20Rng,
) -> Result<Var> {
    let t_len = tape.value(hidden).rows();
    if t_len == 0 {
        return Err(Error::Shape("decoder input has no frames".into()));
    }
    let pe = tape.constant(sinusoidal_positions(t_len, cfg.hidden));
    let mut h = tape.add(hidden, pe)?;
    for l in 0..cfg.decoder_layers {
        h = fft_block(tape, gw, cfg, h, mask, &format!("decoder.{l}"), training, rng)?;
    }
    let w = gw.bind(tape, "mel_out.w")?;
    let b = gw.bind(tape, "mel_out.b")?;
    let out = tape.matmul(h, w)?;
    tape.bias_add(out, b)
}
