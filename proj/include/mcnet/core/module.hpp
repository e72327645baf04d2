#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mcnet/core/autograd.hpp"

namespace mcnet {

// Base for parameterized network components. Children, parameters and
// buffers (running statistics) are registered in constructors; names build
// hierarchical dotted paths used by checkpoints.
class Module {
public:
    Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;
    virtual ~Module() = default;

    void register_parameter(std::string name, ag::Var& p) {
        p.set_requires_grad(true);
        params_.emplace_back(std::move(name), &p);
    }
    void register_buffer(std::string name, Tensor& t) { buffers_.emplace_back(std::move(name), &t); }
    void register_module(std::string name, Module& m) { children_.emplace_back(std::move(name), &m); }

    void named_parameters(std::vector<std::pair<std::string, ag::Var*>>& out,
                          const std::string& prefix = "") const {
        for (auto& [n, p] : params_) out.emplace_back(prefix + n, p);
        for (auto& [n, c] : children_) c->named_parameters(out, prefix + n + ".");
    }
    std::vector<std::pair<std::string, ag::Var*>> named_parameters() const {
        std::vector<std::pair<std::string, ag::Var*>> out;
        named_parameters(out);
        return out;
    }
    void named_buffers(std::vector<std::pair<std::string, Tensor*>>& out,
                       const std::string& prefix = "") const {
        for (auto& [n, t] : buffers_) out.emplace_back(prefix + n, t);
        for (auto& [n, c] : children_) c->named_buffers(out, prefix + n + ".");
    }
    std::vector<std::pair<std::string, Tensor*>> named_buffers() const {
        std::vector<std::pair<std::string, Tensor*>> out;
        named_buffers(out);
        return out;
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (auto& [name, p] : named_parameters()) n += p->numel();
        return n;
    }

    void set_training(bool t) {
        training_ = t;
        for (auto& [n, c] : children_) c->set_training(t);
    }
    bool training() const { return training_; }

    void zero_grad() {
        for (auto& [name, p] : named_parameters()) p->zero_grad();
    }

protected:
    bool training_ = false;

private:
    std::vector<std::pair<std::string, ag::Var*>> params_;
    std::vector<std::pair<std::string, Tensor*>> buffers_;
    std::vector<std::pair<std::string, Module*>> children_;
};

}  // namespace mcnet
