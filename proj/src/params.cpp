#include "vmedit/params.hpp"

#include <cmath>

namespace vmedit {

const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::spatial_rca: return "spatial_rca";
        case ParamGroup::temporal: return "temporal";
        case ParamGroup::cross: return "cross";
        case ParamGroup::motion_adapter: return "motion_adapter";
        case ParamGroup::control: return "control";
        case ParamGroup::conv: return "conv";
        case ParamGroup::embed: return "embed";
    }
    return "?";
}

ParamGroup group_from_name(const std::string& name) {
    for (ParamGroup g : {ParamGroup::spatial_rca, ParamGroup::temporal, ParamGroup::cross,
                         ParamGroup::motion_adapter, ParamGroup::control, ParamGroup::conv,
                         ParamGroup::embed})
        if (name == group_name(g)) return g;
    throw ConfigError("unknown parameter group '" + name + "'");
}

std::string ParamRegistry::scoped(const std::string& name) const {
    std::string full;
    for (const auto& s : scope_) {
        full += s;
        full += '.';
    }
    full += name;
    return full;
}

Tensor ParamRegistry::register_param(const std::string& name, ParamGroup group, Tensor t) {
    std::string full = scoped(name);
    for (const auto& p : params_)
        if (p.name == full) throw ConfigError("duplicate parameter name '" + full + "'");
    t.set_requires_grad(true);
    params_.push_back({full, group, t});
    return t;
}

Tensor ParamRegistry::create_xavier(const std::string& name, ParamGroup group, Shape shape,
                                    std::int64_t fan_in, std::int64_t fan_out) {
    float a = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
    std::vector<float> d(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : d) v = (rng_.uniform_f() * 2.0f - 1.0f) * a;
    return register_param(name, group, Tensor::from_data(std::move(shape), std::move(d)));
}

Tensor ParamRegistry::create_const(const std::string& name, ParamGroup group, Shape shape, float v) {
    return register_param(name, group, Tensor::full(std::move(shape), v));
}

Tensor ParamRegistry::create_normal(const std::string& name, ParamGroup group, Shape shape, float sd) {
    std::vector<float> d(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : d) v = rng_.normal_f() * sd;
    return register_param(name, group, Tensor::from_data(std::move(shape), std::move(d)));
}

std::map<ParamGroup, std::vector<const Parameter*>> ParamRegistry::groups() const {
    std::map<ParamGroup, std::vector<const Parameter*>> out;
    for (const auto& p : params_) out[p.group].push_back(&p);
    return out;
}

std::map<ParamGroup, std::int64_t> ParamRegistry::census() const {
    std::map<ParamGroup, std::int64_t> out;
    for (const auto& p : params_) out[p.group] += p.tensor.numel();
    return out;
}

void ParamRegistry::set_trainable(const std::set<ParamGroup>& groups) {
    for (auto& p : params_) p.tensor.set_requires_grad(groups.count(p.group) > 0);
}

void ParamRegistry::zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace vmedit
