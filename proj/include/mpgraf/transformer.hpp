#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mpgraf/tape.hpp"

namespace mpgraf::transformer {

/// One encoder block's weights: multi-head attention, feed-forward, and the
/// two layer-norm affine pairs. All are views into the owning model's store.
template <class T>
struct BlockParams {
  Parameter<T>* wq = nullptr;
  Parameter<T>* wk = nullptr;
  Parameter<T>* wv = nullptr;
  Parameter<T>* wo = nullptr;
  Parameter<T>* ffn_w1 = nullptr;
  Parameter<T>* ffn_w2 = nullptr;
  Parameter<T>* ln1_gain = nullptr;
  Parameter<T>* ln1_bias = nullptr;
  Parameter<T>* ln2_gain = nullptr;
  Parameter<T>* ln2_bias = nullptr;
};

/// Encoder stack: input FC producing T tokens of width d_model, then E
/// blocks, then mean pooling over tokens. No positional encoding: token
/// order is an artifact of chunking the FC output.
template <class T>
struct EncoderParams {
  std::size_t tokens = 4;       // T
  std::size_t d_model = 32;
  std::size_t heads = 4;        // H, divides d_model
  Parameter<T>* input_fc = nullptr;  // in_width x (T * d_model)
  std::vector<BlockParams<T>> blocks;

  void validate() const {
    if (blocks.empty()) throw Error("encoder: at least one block required");
    if (tokens < 1) throw Error("encoder: tokens must be >= 1");
    if (heads < 1 || d_model % heads != 0)
      throw Error("encoder: d_model must be divisible by heads");
  }
};

/// hidden = input_fc(x), chunked row-major into T tokens of d_model.
/// Input [B, in_width] -> tokens [B*T, d_model].
template <class T>
Var tokenize(Tape<T>& tp, Var x, const EncoderParams<T>& p) {
  const std::size_t batch = tp.val(x).rows();
  if (tp.val(x).cols() != p.input_fc->value.rows())
    throw Error("tokenize: input width " +
                std::to_string(tp.val(x).cols()) + " does not match fc rows " +
                std::to_string(p.input_fc->value.rows()));
  Var hidden = tp.matmul(x, tp.param(*p.input_fc));  // [B, T*d_model]
  return tp.reshape(hidden, {batch * p.tokens, p.d_model});
}

namespace detail {

// Scaled dot-product attention for one sequence and one head.
template <class T>
Var attend(Tape<T>& tp, Var q, Var k, Var v, double scale) {
  Var scores = tp.scale(tp.matmul(q, tp.transpose(k)), static_cast<T>(scale));
  Var attn = tp.softmax(scores, 1);
  return tp.matmul(attn, v);
}

}  // namespace detail

/// out1 = LN(seq + MHA(seq)); out2 = LN(out1 + FFN(out1)).
/// seq is [B*T, d_model]; attention mixes tokens within a sequence only.
template <class T>
Var encoder_block(Tape<T>& tp, Var seq, const BlockParams<T>& blk,
                  std::size_t batch, std::size_t tokens, std::size_t heads) {
  const std::size_t d_model = tp.val(seq).cols();
  const std::size_t d_head = d_model / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));

  Var q = tp.matmul(seq, tp.param(*blk.wq));
  Var k = tp.matmul(seq, tp.param(*blk.wk));
  Var v = tp.matmul(seq, tp.param(*blk.wv));

  std::vector<Var> per_seq;
  per_seq.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Var qb = tp.slice(q, 0, b * tokens, tokens);
    Var kb = tp.slice(k, 0, b * tokens, tokens);
    Var vb = tp.slice(v, 0, b * tokens, tokens);
    std::vector<Var> head_outs;
    head_outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = tp.slice(qb, 1, h * d_head, d_head);
      Var kh = tp.slice(kb, 1, h * d_head, d_head);
      Var vh = tp.slice(vb, 1, h * d_head, d_head);
      head_outs.push_back(detail::attend(tp, qh, kh, vh, scale));
    }
    per_seq.push_back(heads == 1 ? head_outs[0] : tp.concat(1, head_outs));
  }
  Var mha = batch == 1 ? per_seq[0] : tp.concat(0, per_seq);
  mha = tp.matmul(mha, tp.param(*blk.wo));

  Var res1 = tp.add(seq, mha);
  Var out1 = tp.add(tp.mul(tp.layer_norm(res1, 1), tp.param(*blk.ln1_gain)),
                    tp.param(*blk.ln1_bias));

  Var ffn = tp.matmul(tp.gelu(tp.matmul(out1, tp.param(*blk.ffn_w1))),
                      tp.param(*blk.ffn_w2));
  Var res2 = tp.add(out1, ffn);
  return tp.add(tp.mul(tp.layer_norm(res2, 1), tp.param(*blk.ln2_gain)),
                tp.param(*blk.ln2_bias));
}

/// Full encode: tokenize, E blocks, mean-pool tokens.
/// Input [B, in_width] -> representation [B, d_model].
template <class T>
Var encode(Tape<T>& tp, Var x, const EncoderParams<T>& p) {
  p.validate();
  const std::size_t batch = tp.val(x).rows();
  Var seq = tokenize(tp, x, p);
  for (const auto& blk : p.blocks)
    seq = encoder_block(tp, seq, blk, batch, p.tokens, p.heads);
  Var grouped = tp.reshape(seq, {batch, p.tokens, p.d_model});
  return tp.mean_axis(grouped, 1);
}

}  // namespace mpgraf::transformer
