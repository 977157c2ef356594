#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "vmedit/rng.hpp"
#include "vmedit/tensor.hpp"

namespace vmedit {

// Freezing groups of the two-stage strategy.
enum class ParamGroup { spatial_rca, temporal, cross, motion_adapter, control, conv, embed };

const char* group_name(ParamGroup g);
ParamGroup group_from_name(const std::string& name);

struct Parameter {
    std::string name;  // dot-separated path, unique within a model
    ParamGroup group;
    Tensor tensor;  // requires_grad controlled by set_trainable
};

// Owns every parameter of a model in registration order. Registration
// order is the checkpoint order, so it must be construction-deterministic.
class ParamRegistry {
public:
    explicit ParamRegistry(std::uint64_t init_seed) : rng_(init_seed) {}

    // Xavier-uniform over (fan_in, fan_out).
    Tensor create_xavier(const std::string& name, ParamGroup group, Shape shape,
                         std::int64_t fan_in, std::int64_t fan_out);
    Tensor create_const(const std::string& name, ParamGroup group, Shape shape, float v);
    // Small normal init, std `sd`.
    Tensor create_normal(const std::string& name, ParamGroup group, Shape shape, float sd);

    std::vector<Parameter>& params() { return params_; }
    const std::vector<Parameter>& params() const { return params_; }
    std::size_t size() const { return params_.size(); }

    // Disjoint exhaustive partition by group.
    std::map<ParamGroup, std::vector<const Parameter*>> groups() const;
    std::map<ParamGroup, std::int64_t> census() const;  // element counts per group

    // requires_grad true exactly on the listed groups.
    void set_trainable(const std::set<ParamGroup>& groups);

    void zero_grads();

    CounterRng& init_rng() { return rng_; }

    struct Scope {
        Scope(ParamRegistry& r, const std::string& s) : reg(r) { reg.push_scope(s); }
        ~Scope() { reg.pop_scope(); }
        ParamRegistry& reg;
    };
    void push_scope(const std::string& s) { scope_.push_back(s); }
    void pop_scope() { scope_.pop_back(); }

private:
    Tensor register_param(const std::string& name, ParamGroup group, Tensor t);
    std::string scoped(const std::string& name) const;

    CounterRng rng_;
    std::vector<Parameter> params_;
    std::vector<std::string> scope_;
};

}  // namespace vmedit
