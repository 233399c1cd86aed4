#pragma once

#include <string>
#include <vector>

#include "nac/tensor.hpp"

namespace nac {

/// A trainable tensor with the name it is checkpointed under.
struct NamedParam {
    std::string name;
    Tensor value;
    bool decay = true;  // AdamW weight decay applies
};

using ParamList = std::vector<NamedParam>;

/// Registers `t` as trainable. Rank <= 1 tensors never decay.
inline void add_param(ParamList& out, const std::string& name, Tensor t, bool decay = true) {
    t.set_requires_grad(true);
    out.push_back({name, t, decay && t.rank() > 1});
}

}  // namespace nac
