#pragma once

// Finite-difference verification suites shared by the CLI, the unit tests
// and the acceptance binary. Fixtures use toy dimensions (d_w=8, d_h=6,
// d_u=5, |C|=3, sentences of at most 7 tokens) and parameters drawn from
// U(-0.5, 0.5) so that gradients sit well above round-off.

#include <cstdint>
#include <string>
#include <vector>

#include "mgan/corpus.hpp"
#include "mgan/model.hpp"

namespace mgan {

struct ToyFixture {
  Hyperparams hp;
  Vocab vocab;
  SourceCorpus source;
  TargetCorpus target;
  Batch source_batch;
  Batch target_batch;
  Network source_net;
  Network target_net;
  // Smallest |D − ‖u−v‖²| over the different-label CFA pairs.
  double hinge_clearance = 0.0;
};

// Retries derived seeds until every hinge term of the CFA loss is at least
// `min_clearance` away from its kink.
ToyFixture make_toy_fixture(std::uint64_t seed, double init_scale = 0.5, double min_clearance = 1e-2,
                            bool literal_eq9 = true);

// L_src with target representations as constants, and L_tar with source
// representations as constants.
Var toy_source_loss(Tape& tape, ToyFixture& fx);
Var toy_target_loss(Tape& tape, ToyFixture& fx);

struct GradCheckCase {
  std::string name;
  GradCheckReport report;
};

struct GradCheckSuiteOptions {
  std::uint64_t seed = 7;
  double epsilon = 1e-4;
  double tolerance = 1e-5;
  // Adds more fixtures (several seeds, non-literal position relevance).
  bool full = false;
};

std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteOptions& options);

// Module-level cases only: primitives, encoder, attention stack, losses.
std::vector<GradCheckCase> run_module_gradchecks(const GradCheckSuiteOptions& options);
// End-to-end L_src and L_tar on one toy fixture.
std::vector<GradCheckCase> run_end_to_end_gradchecks(std::uint64_t seed, const GradCheckSuiteOptions& options,
                                                     bool literal_eq9 = true);

}  // namespace mgan
