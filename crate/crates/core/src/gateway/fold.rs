//! Subword-to-word attention folding.
//!
//! A real encoder attends over subword tokens. The word-pair weight is the
//! sum over all token pairs mapping to that word pair, special tokens are
//! dropped, and each word row is renormalized to sum to one.

use super::GatewayError;
use crate::backend::AttentionTensor;

/// Tolerance on token-level and folded row sums.
pub const ROW_TOLERANCE: f64 = 1e-4;

/// Folds `(layers, heads, tokens, tokens)` token attention into word
/// attention over `words` words.
pub fn fold_attention(
    layers: usize,
    heads: usize,
    tokens: usize,
    weights: &[f64],
    token_to_word: &[i64],
    words: usize,
) -> Result<AttentionTensor, GatewayError> {
    if layers == 0 || heads == 0 || tokens == 0 {
        return Err(GatewayError::MalformedResponse(
            "attention must have at least one layer, head and token".into(),
        ));
    }
    if weights.len() != layers * heads * tokens * tokens {
        return Err(GatewayError::MalformedResponse(format!(
            "expected {} attention weights, got {}",
            layers * heads * tokens * tokens,
            weights.len()
        )));
    }
    if token_to_word.len() != tokens {
        return Err(GatewayError::MalformedResponse(format!(
            "token_to_word has {} entries for {tokens} tokens",
            token_to_word.len()
        )));
    }
    let mapping: Vec<Option<usize>> = token_to_word
        .iter()
        .map(|&w| match w {
            -1 => Ok(None),
            w if w >= 0 && (w as usize) < words => Ok(Some(w as usize)),
            w => Err(GatewayError::MalformedResponse(format!(
                "token_to_word entry {w} is outside -1..{words}"
            ))),
        })
        .collect::<Result<_, _>>()?;
    if let Some(missing) = (0..words).find(|w| !mapping.contains(&Some(*w))) {
        return Err(GatewayError::MalformedResponse(format!(
            "word {missing} has no tokens"
        )));
    }

    let mut folded = Vec::with_capacity(layers * heads * words * words);
    for layer in 0..layers {
        for head in 0..heads {
            let base = (layer * heads + head) * tokens * tokens;
            let slice = &weights[base..base + tokens * tokens];
            for (row, values) in slice.chunks(tokens).enumerate() {
                let sum: f64 = values.iter().sum();
                if values.iter().any(|&v| v < 0.0 || !v.is_finite())
                    || (sum - 1.0).abs() > ROW_TOLERANCE
                {
                    return Err(GatewayError::InvalidTensor {
                        layer,
                        head,
                        row,
                        sum,
                    });
                }
            }

            let mut word_rows = vec![0.0; words * words];
            for (t, wt) in mapping.iter().enumerate() {
                let Some(wt) = wt else { continue };
                for (u, wu) in mapping.iter().enumerate() {
                    let Some(wu) = wu else { continue };
                    word_rows[wt * words + wu] += slice[t * tokens + u];
                }
            }
            for (row, values) in word_rows.chunks_mut(words).enumerate() {
                let sum: f64 = values.iter().sum();
                if sum <= 0.0 {
                    return Err(GatewayError::InvalidTensor {
                        layer,
                        head,
                        row,
                        sum,
                    });
                }
                values.iter_mut().for_each(|v| *v /= sum);
            }
            folded.extend_from_slice(&word_rows);
        }
    }
    let tensor = AttentionTensor::new(layers, heads, words, folded);
    tensor
        .check_stochastic(ROW_TOLERANCE)
        .map_err(|e| GatewayError::InvalidTensor {
            layer: e.layer,
            head: e.head,
            row: e.row,
            sum: e.sum,
        })?;
    Ok(tensor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_token_per_word_is_identity() {
        let w = [0.25, 0.75, 0.6, 0.4];
        let t = fold_attention(1, 1, 2, &w, &[0, 1], 2).unwrap();
        assert_eq!(t.weights(), &w);
    }

    #[test]
    fn special_tokens_are_dropped() {
        // [BOS] x [EOS]: the single word keeps all remaining mass.
        let w = [
            0.2, 0.5, 0.3, //
            0.1, 0.8, 0.1, //
            0.3, 0.3, 0.4,
        ];
        let t = fold_attention(1, 1, 3, &w, &[-1, 0, -1], 1).unwrap();
        assert_eq!(t.weights(), &[1.0]);
    }

    #[test]
    fn rejects_bad_shapes_and_maps() {
        let w = [0.5, 0.5, 0.5, 0.5];
        assert!(matches!(
            fold_attention(1, 1, 2, &w, &[0, 2], 2),
            Err(GatewayError::MalformedResponse(_))
        ));
        assert!(matches!(
            fold_attention(1, 1, 2, &w, &[0, -2], 2),
            Err(GatewayError::MalformedResponse(_))
        ));
        assert!(matches!(
            fold_attention(1, 1, 2, &w[..3], &[0, 1], 2),
            Err(GatewayError::MalformedResponse(_))
        ));
        assert!(matches!(
            fold_attention(1, 1, 2, &w, &[0, 0], 2),
            Err(GatewayError::MalformedResponse(_))
        ));
    }

    #[test]
    fn non_stochastic_token_row_is_located() {
        let w = [0.5, 0.5, 0.9, 0.6];
        match fold_attention(1, 1, 2, &w, &[0, 1], 2) {
            Err(GatewayError::InvalidTensor { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
