#include "phonolens/hooks.hpp"

#include <algorithm>

#include "phonolens/error.hpp"

namespace phonolens {

CaptureHook::CaptureHook(std::set<ActivationAddress> addresses) : addresses_(std::move(addresses)) {
  for (const auto& a : addresses_) sites_.emplace(a.component, a.layer);
}

bool CaptureHook::wants(Component component, int layer) const {
  return sites_.count({component, layer}) > 0;
}

void CaptureHook::visit(const ActivationAddress& address, std::span<float> value) {
  if (addresses_.count(address)) captured_[address] = to_vector(value);
}

PatchHook::PatchHook(const std::map<ActivationAddress, Vector>& patches) : patches_(patches) {
  for (const auto& [a, _] : patches_) sites_.emplace(a.component, a.layer);
}

bool PatchHook::wants(Component component, int layer) const {
  return sites_.count({component, layer}) > 0;
}

void PatchHook::visit(const ActivationAddress& address, std::span<float> value) {
  auto it = patches_.find(address);
  if (it == patches_.end()) return;
  const Vector& v = it->second;
  require(static_cast<std::size_t>(v.size()) == value.size(), ErrorKind::shape,
          "patch for " + to_string(address) + " has width " + std::to_string(v.size()) +
              ", activation has " + std::to_string(value.size()));
  std::copy(v.data(), v.data() + v.size(), value.begin());
}

ZeroHeadsHook::ZeroHeadsHook(std::set<std::pair<int, int>> heads) : heads_(std::move(heads)) {}

bool ZeroHeadsHook::wants(Component component, int layer) const {
  if (component != Component::head_z) return false;
  return std::any_of(heads_.begin(), heads_.end(), [&](const auto& h) { return h.first == layer; });
}

void ZeroHeadsHook::visit(const ActivationAddress& address, std::span<float> value) {
  if (heads_.count({address.layer, address.head})) std::fill(value.begin(), value.end(), 0.0f);
}

EmbeddingEditHook::EmbeddingEditHook(int position, Vector delta)
    : position_(position), delta_(std::move(delta)) {}

bool EmbeddingEditHook::wants(Component component, int /*layer*/) const {
  return component == Component::embedding;
}

void EmbeddingEditHook::visit(const ActivationAddress& address, std::span<float> value) {
  if (address.position != position_) return;
  require(static_cast<std::size_t>(delta_.size()) == value.size(), ErrorKind::shape,
          "embedding delta has wrong width");
  for (std::size_t i = 0; i < value.size(); ++i) value[i] += delta_[static_cast<Eigen::Index>(i)];
}

bool HookChain::wants(Component component, int layer) const {
  return std::any_of(hooks_.begin(), hooks_.end(),
                     [&](const ActivationHook* h) { return h->wants(component, layer); });
}

void HookChain::visit(const ActivationAddress& address, std::span<float> value) {
  for (auto* h : hooks_) {
    if (h->wants(address.component, address.layer)) h->visit(address, value);
  }
}

}  // namespace phonolens
