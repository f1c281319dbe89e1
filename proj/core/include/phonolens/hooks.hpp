#pragma once

#include <map>
#include <set>
#include <vector>

#include "phonolens/tensor.hpp"
#include "phonolens/transformer.hpp"

namespace phonolens {

class CaptureHook final : public ActivationHook {
 public:
  explicit CaptureHook(std::set<ActivationAddress> addresses);

  bool wants(Component component, int layer) const override;
  void visit(const ActivationAddress& address, std::span<float> value) override;
  std::map<ActivationAddress, Vector>& captured() { return captured_; }

 private:
  std::set<ActivationAddress> addresses_;
  std::set<std::pair<Component, int>> sites_;
  std::map<ActivationAddress, Vector> captured_;
};

// Replaces addressed activations with fixed values.
class PatchHook final : public ActivationHook {
 public:
  explicit PatchHook(const std::map<ActivationAddress, Vector>& patches);

  bool wants(Component component, int layer) const override;
  void visit(const ActivationAddress& address, std::span<float> value) override;

 private:
  const std::map<ActivationAddress, Vector>& patches_;
  std::set<std::pair<Component, int>> sites_;
};

// Zeroes head_z of the listed (layer, head) pairs at every position.
class ZeroHeadsHook final : public ActivationHook {
 public:
  explicit ZeroHeadsHook(std::set<std::pair<int, int>> heads);

  bool wants(Component component, int layer) const override;
  void visit(const ActivationAddress& address, std::span<float> value) override;

 private:
  std::set<std::pair<int, int>> heads_;
};

// Adds `delta` to the embedding row at one position.
class EmbeddingEditHook final : public ActivationHook {
 public:
  EmbeddingEditHook(int position, Vector delta);

  bool wants(Component component, int layer) const override;
  void visit(const ActivationAddress& address, std::span<float> value) override;

 private:
  int position_;
  Vector delta_;
};

// Dispatches to several hooks in order.
class HookChain final : public ActivationHook {
 public:
  explicit HookChain(std::vector<ActivationHook*> hooks) : hooks_(std::move(hooks)) {}

  bool wants(Component component, int layer) const override;
  void visit(const ActivationAddress& address, std::span<float> value) override;

 private:
  std::vector<ActivationHook*> hooks_;
};

}  // namespace phonolens
