// Smallest end-to-end use of the library: synthetic data, a rule-seeded
// network, its test accuracy and the rules read back out of it.
#include <iostream>

#include "nsai/datakit.hpp"
#include "nsai/evalharness.hpp"
#include "nsai/kbann.hpp"
#include "nsai/rulelang.hpp"

int main() {
  const auto rules = nsai::rules::parse_rules(
      "Final_score :- CT_concepts, CT_skills.\n"
      "CT_concepts :- Conditional, Loop.\n"
      "CT_skills :- Debug, Simulation, Function.\n");

  const auto split = nsai::data::generate_synthetic({});
  const auto train = nsai::data::normalize(split.train);
  const auto test = nsai::data::apply_normalization(split.test, *train.scaling);

  const auto cc = nsai::eval::comparison_config::default_nsai_compile();
  const auto result = nsai::eval::train_nsai(train, rules, cc, {}, 1);
  const auto m = nsai::eval::evaluate(result.net, test);
  std::cout << "test accuracy " << nsai::eval::percent(m.accuracy) << "% after "
            << result.report.epochs_run << " epochs\n\n";
  std::cout << nsai::kbann::to_text(nsai::kbann::extract_rules(result.net, train));
}
