#pragma once

#include <string>
#include <vector>

#include "riposte/bytes.hpp"

// Pedersen commitments C(m, r) = m*P + r*Q over a generic group, plus the
// fixed row-expansion bases P_i used by the seed-homomorphic PRG. Generators
// are derived from ASCII labels by hashing to the group, so no party knows
// discrete-log relations between them.
namespace riposte::pedersen {

template <class G>
struct Params {
  typename G::Element P;                 // value base
  typename G::Element Q;                 // blinding base
  std::vector<typename G::Element> row;  // P_i, one per row cell

  static Params derive(const G& g, size_t y_cells) {
    Params p{g.element_from_label("riposte/P"), g.element_from_label("riposte/Q"), {}};
    p.row.reserve(y_cells);
    for (size_t i = 0; i < y_cells; i++)
      p.row.push_back(g.element_from_label("riposte/G/" + std::to_string(i)));
    return p;
  }
};

template <class G>
typename G::Element commit(const G& g, const Params<G>& p, const typename G::Scalar& m,
                           const typename G::Scalar& r) {
  return g.add(g.mul(m, p.P), g.mul(r, p.Q));
}

// Seed-homomorphic row expansion: G_sh(s) = (s*P_0, ..., s*P_{y-1}).
// Expansion of a sum of seeds equals the elementwise sum of expansions.
template <class G>
std::vector<typename G::Element> shprg_expand(const G& g, const Params<G>& p,
                                              const typename G::Scalar& seed, size_t y) {
  require(y <= p.row.size(), Errc::invalid_argument, "row bases shorter than request");
  std::vector<typename G::Element> out;
  out.reserve(y);
  for (size_t i = 0; i < y; i++) out.push_back(g.mul(seed, p.row[i]));
  return out;
}

}  // namespace riposte::pedersen
