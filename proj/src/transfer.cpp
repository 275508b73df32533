#include "trafficdtl/transfer.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "trafficdtl/error.hpp"
#include "trafficdtl/runtime.hpp"

namespace trafficdtl {

std::vector<std::size_t> tunable_layers(const ModelGraph& model) {
  const auto idx = model.parameterized_layers();
  if (idx.size() < 3) throw ShapeError("transfer: model needs at least three parameterized layers");
  return {idx.end() - 3, idx.end()};
}

FreezeMask FreezeMask::from_bits(const ModelGraph& model, unsigned bits) {
  if (bits > 7) throw std::invalid_argument("freeze mask bits must be in 0..7");
  FreezeMask m;
  m.frozen.assign(model.layer_count(), true);
  const auto tunable = tunable_layers(model);
  for (std::size_t k = 0; k < 3; ++k) {
    const bool retrain = (bits >> k) & 1u;
    m.frozen[tunable[k]] = !retrain;
    m.label += retrain ? 'T' : 'F';
  }
  // Parameterless layers have nothing to freeze; keep them unflagged.
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    if (!model.layer(i).has_parameters()) m.frozen[i] = false;
  }
  return m;
}

FreezeMask FreezeMask::from_label(const ModelGraph& model, const std::string& label) {
  if (label.size() != 3 || label.find_first_not_of("TF") != std::string::npos) {
    throw std::invalid_argument("freeze mask label must be three of T/F, got '" + label + "'");
  }
  unsigned bits = 0;
  for (std::size_t k = 0; k < 3; ++k)
    if (label[k] == 'T') bits |= 1u << k;
  return from_bits(model, bits);
}

bool FreezeMask::all_frozen() const { return label.find('T') == std::string::npos; }

void FreezeMask::apply(ModelGraph& model) const {
  if (frozen.size() != model.layer_count()) throw ShapeError("freeze mask does not match the model's layer count");
  for (std::size_t i = 0; i < frozen.size(); ++i) model.layer(i).set_frozen(frozen[i]);
}

std::size_t FreezeMask::trainable_param_count(const ModelGraph& model) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < model.layer_count(); ++i)
    if (!frozen.at(i)) n += param_count(model.layer(i));
  return n;
}

std::vector<FreezeMask> all_masks(const ModelGraph& model) {
  std::vector<FreezeMask> out;
  for (unsigned b = 0; b < 8; ++b) out.push_back(FreezeMask::from_bits(model, b));
  return out;
}

TransferResult transfer(const ModelGraph& teacher, const WindowedDataset& train, const WindowedDataset& validation,
                        const FreezeMask& mask, const TrainConfig& config, const ModelGraph* student_architecture) {
  if (student_architecture) require_same_architecture(teacher, *student_architecture);
  TransferResult r{teacher, {}};
  mask.apply(r.student);
  TrainConfig cfg = config;
  if (mask.all_frozen()) cfg.epochs = 0;
  r.train = trafficdtl::train(r.student, train, validation, cfg);
  return r;
}

double SweepMember::mean_mse() const {
  double s = 0;
  for (const auto& r : runs) s += r.mse;
  return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
}

double SweepMember::mean_wall_time() const {
  double s = 0;
  for (const auto& r : runs) s += r.wall_time;
  return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
}

double SweepMember::mean_epochs() const {
  double s = 0;
  for (const auto& r : runs) s += static_cast<double>(r.epochs_used);
  return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
}

SweepResult sweep(const ModelGraph& teacher, const WindowedDataset& train, const WindowedDataset& validation,
                  const TrainConfig& config, const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
  if (seeds.empty()) throw std::invalid_argument("sweep: needs at least one seed");
  SweepResult out;
  for (const FreezeMask& m : all_masks(teacher)) {
    SweepMember member;
    member.mask = m;
    member.trainable_params = m.trainable_param_count(teacher);
    member.runs.resize(seeds.size());
    out.members.push_back(std::move(member));
  }
  parallel_for(out.members.size() * seeds.size(), jobs, [&](std::size_t task) {
    SweepMember& member = out.members[task / seeds.size()];
    TrainConfig cfg = config;
    cfg.seed = seeds[task % seeds.size()];
    member.runs[task % seeds.size()] = transfer(teacher, train, validation, member.mask, cfg).train.eval;
  });
  for (std::size_t i = 1; i < out.members.size(); ++i)
    if (out.members[i].mean_mse() < out.members[out.best].mean_mse()) out.best = i;
  return out;
}

}  // namespace trafficdtl
