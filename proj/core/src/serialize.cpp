#include "fundus/serialize.hpp"

namespace fundus {

void to_json(nlohmann::ordered_json& j, const CbamSpec& s) {
  j = {{"reduction_ratio", s.reduction_ratio},
       {"spatial_kernel", s.spatial_kernel}};
}

void from_json(const nlohmann::ordered_json& j, CbamSpec& s) {
  j.at("reduction_ratio").get_to(s.reduction_ratio);
  j.at("spatial_kernel").get_to(s.spatial_kernel);
}

void to_json(nlohmann::ordered_json& j, const GeneratorSpec& s) {
  j = {{"stem_filters", s.stem_filters}, {"stem_kernels", s.stem_kernels},
       {"stem_strides", s.stem_strides}, {"n_res_blocks", s.n_res_blocks},
       {"res_filters", s.res_filters},   {"res_kernel", s.res_kernel},
       {"up_filters", s.up_filters},     {"up_kernels", s.up_kernels},
       {"use_cbam", s.use_cbam},         {"cbam", s.cbam}};
}

void from_json(const nlohmann::ordered_json& j, GeneratorSpec& s) {
  j.at("stem_filters").get_to(s.stem_filters);
  j.at("stem_kernels").get_to(s.stem_kernels);
  j.at("stem_strides").get_to(s.stem_strides);
  j.at("n_res_blocks").get_to(s.n_res_blocks);
  j.at("res_filters").get_to(s.res_filters);
  j.at("res_kernel").get_to(s.res_kernel);
  j.at("up_filters").get_to(s.up_filters);
  j.at("up_kernels").get_to(s.up_kernels);
  j.at("use_cbam").get_to(s.use_cbam);
  j.at("cbam").get_to(s.cbam);
}

void to_json(nlohmann::ordered_json& j, const DiscriminatorSpec& s) {
  j = {{"filters", s.filters},
       {"kernel", s.kernel},
       {"strides", s.strides},
       {"padding", s.padding},
       {"leaky_slope", s.leaky_slope}};
}

void from_json(const nlohmann::ordered_json& j, DiscriminatorSpec& s) {
  j.at("filters").get_to(s.filters);
  j.at("kernel").get_to(s.kernel);
  j.at("strides").get_to(s.strides);
  j.at("padding").get_to(s.padding);
  j.at("leaky_slope").get_to(s.leaky_slope);
}

void to_json(nlohmann::ordered_json& j, const UNetSpec& s) {
  j = {{"levels", s.levels},
       {"base_filters", s.base_filters},
       {"use_cbam", s.use_cbam},
       {"cbam", s.cbam},
       {"threshold", s.threshold}};
}

void from_json(const nlohmann::ordered_json& j, UNetSpec& s) {
  j.at("levels").get_to(s.levels);
  j.at("base_filters").get_to(s.base_filters);
  j.at("use_cbam").get_to(s.use_cbam);
  j.at("cbam").get_to(s.cbam);
  j.at("threshold").get_to(s.threshold);
}

}  // namespace fundus
