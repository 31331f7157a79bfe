#include <iostream>

#include <CLI11.hpp>

#include "gdsrec/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic bias-model dataset (ratings.txt, trust.txt)"};
  gdsrec::SyntheticSpec spec;
  std::string out;
  app.add_option("out", out, "output directory")->required();
  app.add_option("--users", spec.users);
  app.add_option("--items", spec.items);
  app.add_option("--density", spec.density);
  app.add_option("--noise", spec.noise_sd);
  app.add_option("--trust", spec.trust_probability, "probability of each directed trust edge");
  app.add_option("--seed", spec.seed);
  CLI11_PARSE(app, argc, argv);
  try {
    const auto data = gdsrec::make_synthetic(spec);
    gdsrec::write_synthetic(data, out);
    std::cout << data.ratings.records.size() << " ratings, " << data.trust.edges.size() << " trust edges\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
