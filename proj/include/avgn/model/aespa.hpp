#pragma once

#include <cstdint>
#include <vector>

#include "avgn/model/config.hpp"
#include "avgn/nn/layers.hpp"

namespace avgn {

// Audio stream shared by all frames of one video: layer inputs z^A_l and the
// keys/values that bottleneck queries reuse.
struct AudioStream {
  std::vector<Tensor> z;             // z[l] feeds layer l; [T x d_f]
  std::vector<nn::KeyValue> kv;      // per layer, from norm1(z[l])
  Tensor z1;                         // projected, position-encoded input
};

// Bottleneck fusion of one frame's flattened visual map with the pooled audio
// sequence.
class Aespa {
 public:
  Aespa() = default;
  Aespa(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng);

  // Projects pooled audio [T x D_A] and, in shared mode, runs the audio stack once.
  AudioStream prepare_audio(const Tensor& pooled_audio) const;
  // Flattened visual tokens [(H_G*W_G) x d_f] with learned 2-D positions.
  Tensor prepare_visual(const Tensor& global_map) const;

  // One fusion layer for one frame. zA is the layer input (per frame when the
  // audio stream is not shared). Returns {zA', zG', b'}.
  struct LayerOut {
    Tensor z_audio, z_visual, bottleneck;
  };
  LayerOut layer(std::size_t l, const Tensor& z_audio, const nn::KeyValue* shared_kv,
                 const Tensor& z_visual, const Tensor& bottleneck) const;

  // e^GA_t [d_f x H_G x W_G]
  Tensor operator()(const Tensor& global_map, const AudioStream& audio) const;

  std::size_t layers() const { return tf_a_.size(); }
  std::size_t bottlenecks() const { return n_b_; }
  bool shared() const { return shared_; }
  const Tensor& initial_bottleneck() const { return b_init_; }

  // Once per video (audio projection and, if shared, the audio stack).
  std::uint64_t audio_macs(std::size_t T) const;
  // Per fused frame.
  std::uint64_t frame_macs(std::size_t T) const;

 private:
  nn::Linear proj_g_, proj_a_;
  Tensor pos_g_, b_init_;
  std::vector<nn::TransformerLayer> tf_a_, tf_g_;
  std::size_t n_b_ = 0, d_f_ = 0, h_ = 0, w_ = 0;
  bool shared_ = true;
};

}  // namespace avgn
