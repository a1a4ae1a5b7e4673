#include "st4d/model.hpp"

#include <string>

namespace st4d {

namespace {

std::array<int, 3> advance_spatial(const std::array<int, 3>& in, const ConvLayerSpec& layer,
                                   const std::string& stage, std::size_t index) {
  if (layer.out_channels < 1 || layer.kernel < 1 || layer.stride < 1 || layer.padding < 0) {
    throw ConfigError(stage + " layer " + std::to_string(index) +
                      ": channels/kernel/stride must be >= 1 and padding >= 0");
  }
  if (layer.dropout < 0.0 || layer.dropout >= 1.0) {
    throw ConfigError(stage + " layer " + std::to_string(index) + ": dropout rate " +
                      std::to_string(layer.dropout) + " outside [0, 1)");
  }
  ConvSpec spec{{layer.kernel, layer.kernel, layer.kernel},
                {layer.stride, layer.stride, layer.stride},
                {layer.padding, layer.padding, layer.padding},
                1,
                layer.out_channels};
  try {
    return conv3d_output_spatial(in, spec);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(stage + " layer " + std::to_string(index) + ": " + e.what());
  }
}

}  // namespace

ShapeChain validate_config(const ModelConfig& config) {
  if (config.num_classes < 2) {
    throw ConfigError("num_classes must be >= 2, got " + std::to_string(config.num_classes));
  }
  if (config.input_channels < 1) {
    throw ConfigError("input_channels must be >= 1, got " + std::to_string(config.input_channels));
  }
  if (config.crop_length < 1) {
    throw ConfigError("crop_length must be >= 1, got " + std::to_string(config.crop_length));
  }
  for (int e : config.input_spatial) {
    if (e < 1) throw ConfigError("input_spatial extents must be >= 1");
  }
  if (config.spatial_cnn.empty()) {
    throw ConfigError("spatial_cnn needs at least one layer");
  }

  ShapeChain chain;
  std::array<int, 3> sp = config.input_spatial;
  int channels = config.input_channels;
  for (std::size_t l = 0; l < config.spatial_cnn.size(); ++l) {
    sp = advance_spatial(sp, config.spatial_cnn[l], "spatial_cnn", l);
    chain.spatial.push_back(sp);
    channels = config.spatial_cnn[l].out_channels;
  }

  if (config.variant == ModelVariant::kClstm) {
    if (config.clstm_hidden < 1 || config.clstm_layers < 1) {
      throw ConfigError("clstm variant needs hidden channels and layer count >= 1");
    }
    if (config.clstm_kernel < 1 || config.clstm_kernel % 2 == 0) {
      throw ConfigError("clstm kernel must be odd for same-padding, got " +
                        std::to_string(config.clstm_kernel));
    }
    chain.clstm_spatial = sp;
    channels = 2 * config.clstm_hidden;
    for (std::size_t l = 0; l < config.head_cnn.size(); ++l) {
      sp = advance_spatial(sp, config.head_cnn[l], "head_cnn", l);
      chain.head.push_back(sp);
      channels = config.head_cnn[l].out_channels;
    }
    chain.feature_count = channels * sp[0] * sp[1] * sp[2];
    chain.dense_inputs = chain.feature_count;
  } else {
    if (config.temporal_channels < 1) {
      throw ConfigError("temporal_channels must be >= 1");
    }
    if (config.temporal_kernel < 1 || config.temporal_kernel % 2 == 0) {
      throw ConfigError("temporal kernel must be odd for same-padding, got " +
                        std::to_string(config.temporal_kernel));
    }
    chain.pooled_features = channels;
    chain.dense_inputs = config.temporal_channels;
  }
  return chain;
}

std::size_t parameter_count(const ModelConfig& config) {
  const ShapeChain chain = validate_config(config);
  auto cube = [](int k) { return static_cast<std::size_t>(k) * k * k; };
  std::size_t total = 0;

  int channels = config.input_channels;
  for (const auto& l : config.spatial_cnn) {
    total += static_cast<std::size_t>(l.out_channels) * channels * cube(l.kernel) +
             static_cast<std::size_t>(l.out_channels);
    channels = l.out_channels;
  }
  if (config.variant == ModelVariant::kClstm) {
    const std::size_t h = static_cast<std::size_t>(config.clstm_hidden);
    int lstm_in = channels;
    for (int l = 0; l < config.clstm_layers; ++l) {
      const std::size_t per_dir = 4 * h * lstm_in * cube(config.clstm_kernel) +
                                  4 * h * h * cube(config.clstm_kernel) + 4 * h;
      total += 2 * per_dir;
      lstm_in = 2 * config.clstm_hidden;
    }
    channels = lstm_in;
    for (const auto& l : config.head_cnn) {
      total += static_cast<std::size_t>(l.out_channels) * channels * cube(l.kernel) +
               static_cast<std::size_t>(l.out_channels);
      channels = l.out_channels;
    }
  } else {
    total += static_cast<std::size_t>(config.temporal_channels) * channels *
                 static_cast<std::size_t>(config.temporal_kernel) +
             static_cast<std::size_t>(config.temporal_channels);
  }
  total += static_cast<std::size_t>(config.num_classes) * chain.dense_inputs +
           static_cast<std::size_t>(config.num_classes);
  return total;
}

}  // namespace st4d
