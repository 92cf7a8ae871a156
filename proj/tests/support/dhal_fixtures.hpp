// Random encoded states and experiences for the learning tests.
#pragma once

#include <memory>
#include <random>
#include <vector>

#include "dhal.hpp"
#include "oracles.hpp"

namespace fixture {

// `n` states over random junction snapshots; every ego is one of the
// snapshot's vehicles and flags a random subset of the others.
inline std::vector<crossway::dhal::StateEncoding> random_states(const crossway::Layout& layout,
                                                                const crossway::dhal::EncodingSpec& spec,
                                                                std::mt19937_64& rng, int n) {
  using namespace crossway;
  std::vector<dhal::StateEncoding> out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (static_cast<int>(out.size()) < n) {
    auto vs = oracle::random_vehicles(layout, rng, 16);
    if (vs.empty()) continue;
    auto raster = std::make_shared<const dhal::Raster>(dhal::build_raster(vs, layout, spec));
    for (const auto& ego : vs) {
      std::vector<VehicleId> partners;
      for (const auto& o : vs) {
        if (o.id != ego.id && u(rng) < 0.3) partners.push_back(o.id);
      }
      out.push_back(dhal::encode_state(raster, ego, partners, layout, spec));
      if (static_cast<int>(out.size()) == n) break;
    }
  }
  return out;
}

inline std::vector<const crossway::dhal::StateEncoding*> pointers(
    const std::vector<crossway::dhal::StateEncoding>& states) {
  std::vector<const crossway::dhal::StateEncoding*> p;
  for (const auto& s : states) p.push_back(&s);
  return p;
}

}  // namespace fixture
