#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "usens/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"usens: utility sensitivity engine for finite market trees"};
  app.require_subcommand(1);
  usens::RunConfig cfg;
  std::vector<std::string> tols;
  bool json_out = false;

  auto common = [&](CLI::App* s) {
    s->add_option("--tol", tols, "tolerance override name=value (repeatable)");
    s->add_option("--report", cfg.report_path, "write the JSON report here");
    s->add_flag("--json", json_out, "print the JSON report instead of the table");
  };
  auto* validate = app.add_subcommand("validate", "check a model file and find a martingale measure");
  validate->add_option("--model", cfg.model_path, "model JSON")->required();
  common(validate);
  for (const char* name : {"solve", "sense", "audit"}) {
    auto* s = app.add_subcommand(name, std::string(name) == "solve"   ? "solve the primal and dual problems"
                                       : std::string(name) == "sense" ? "second-order sensitivity with FD oracle"
                                                                      : "utility checks plus solver audits");
    s->add_option("--model", cfg.model_path, "model JSON")->required();
    s->add_option("--utility", cfg.utility_path, "utility JSON")->required();
    s->add_option("--capital", cfg.capital, "initial capital x");
    s->add_option("--grid", cfg.grid, "capitals for the value curve");
    if (std::string(name) == "sense") s->add_option("--fd-ladder", cfg.fd_ladder, "relative FD steps, decreasing");
    common(s);
  }
  auto* atlas = app.add_subcommand("atlas", "counterexample ladders");
  atlas->add_option("--example", cfg.example, "1, 2, 3 or 4")->required();
  atlas->add_option("--levels", cfg.levels, "truncation levels N");
  common(atlas);

  CLI11_PARSE(app, argc, argv);
  cfg.subcommand = app.get_subcommands().front()->get_name();
  try {
    for (const auto& t : tols) cfg.tolerances.push_back(usens::parse_tolerance(t));
    const auto res = usens::run(cfg);
    if (json_out) std::cout << res.report.dump(2) << '\n';
    else std::cout << usens::render_table(res.report);
    return res.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "usens: " << e.what() << '\n';
    return usens::kExitModel;
  }
}
