#pragma once

#include <string>
#include <vector>

#include "rpr/autograd.hpp"
#include "rpr/rng.hpp"

namespace rpr::net {

using ag::Var;

// Named parameter registry used by checkpoints and the optimizer.
struct ParamMap {
    std::vector<std::pair<std::string, Var>> items;
    void add(const std::string& name, const Var& v) { items.emplace_back(name, v); }
};

struct Conv2d {
    Var w;  // [Co,Ci,k,k]
    Var b;  // [Co]
    int stride = 1, pad = 1;

    static Conv2d make(Rng& rng, int ci, int co, int k, int stride, int pad);
    Var operator()(const Var& x) const { return ag::conv2d(x, w, b, stride, pad); }
    void params(ParamMap& m, const std::string& prefix) const {
        m.add(prefix + ".w", w);
        m.add(prefix + ".b", b);
    }
};

struct Linear {
    Var w;  // [out,in]
    Var b;  // [out]

    static Linear make(Rng& rng, int in, int out, bool zero_init = false);
    // x[M,in] -> [M,out]
    Var operator()(const Var& x) const { return ag::add_rowvec(ag::matmul_abt(x, w), b); }
    void params(ParamMap& m, const std::string& prefix) const {
        m.add(prefix + ".w", w);
        m.add(prefix + ".b", b);
    }
};

}  // namespace rpr::net
