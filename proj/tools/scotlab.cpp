// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// scotlab <verb> --config <path> --out <dir>
//
// Exit codes: 0 success, 1 invalid configuration or inputs, 2 runtime failure.

#include "scotlab/scotlab.hpp"

#include "CLI11.hpp"

#include <exception>
#include <iostream>
#include <string>

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string config;
  std::string out;
  std::string teacher;
  std::string student;
  bool quiet = false;
};

CLI::App* add_verb(CLI::App& app, const char* name, const char* help, Options& opt,
                   bool teacher, bool student) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("--config", opt.config, "run configuration (JSON)")->required();
  sub->add_option("--out", opt.out, "output directory")->required();
  if (teacher) sub->add_option("--teacher", opt.teacher, "teacher checkpoint");
  if (student) sub->add_option("--student", opt.student, "student checkpoint");
  sub->add_flag("--quiet", opt.quiet, "suppress progress output");
  return sub;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scotlab: straight-consistent trajectory distillation on toy 2-D data"};
  app.require_subcommand(1);
  Options opt;
  CLI::App* train = add_verb(app, "train-teacher", "train the flow-matching teacher", opt, false, false);
  CLI::App* distill = add_verb(app, "distill", "distill the teacher into a student", opt, true, false);
  CLI::App* eval = add_verb(app, "eval", "evaluate a student checkpoint", opt, true, true);
  CLI::App* compare = add_verb(app, "compare", "weighting-strategy comparison table", opt, true, false);
  CLI::App* exp = add_verb(app, "export-traj", "export teacher and student trajectories", opt, true, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    const scotlab::RunConfig cfg = scotlab::load_config(opt.config);
    const scotlab::fs::path out(opt.out);
    std::ostream* log = opt.quiet ? nullptr : &std::cerr;
    auto teacher_path = [&] {
      return scotlab::resolve_checkpoint(opt.teacher, cfg.paths.teacher_checkpoint, out,
                                         "teacher.json", "teacher");
    };
    auto student_path = [&] {
      return scotlab::resolve_checkpoint(opt.student, cfg.paths.student_checkpoint, out,
                                         "student.json", "student");
    };

    if (train->parsed()) {
      scotlab::run_train_teacher(cfg, out, log);
    } else if (distill->parsed()) {
      scotlab::run_distill(cfg, teacher_path(), out, log);
    } else if (eval->parsed()) {
      const scotlab::Checkpoints ck{teacher_path(), student_path()};
      for (const auto& row : scotlab::run_eval(cfg, ck, out)) {
        if (log) {
          *log << "nfe " << row.nfe << " sw2 " << scotlab::format_double(row.sw2) << " gfd "
               << scotlab::format_double(row.gfd) << '\n';
        }
      }
    } else if (compare->parsed()) {
      scotlab::run_compare(cfg, teacher_path(), out, log);
    } else if (exp->parsed()) {
      scotlab::export_trajectories(cfg, {teacher_path(), student_path()}, out);
    }
  } catch (const scotlab::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
