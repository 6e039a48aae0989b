/* Copyright 2026 The MTMD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Command-line front end. Exit codes: 0 success, 1 usage, 2 data/format/io,
// 3 configuration.

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mtmd/mtmd.hpp"

namespace {

using namespace mtmd;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitConfig = 3;

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = ".";
};

RunConfig load_run_config(const Globals& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  if (g.seed_set) {
    c.seed = g.seed;
    c.train.seed = g.seed;
  }
  c.train.seed = c.seed;
  return c;
}

std::string out_path(const Globals& g, const std::string& file) {
  fs::create_directories(g.out);
  return (fs::path(g.out) / file).string();
}

// Relative input paths resolve against --out unless they exist as given.
std::string in_path(const Globals& g, const std::string& file) {
  if (fs::exists(file) || fs::path(file).is_absolute()) return file;
  return (fs::path(g.out) / file).string();
}

std::uint64_t eval_seed(std::uint64_t seed) { return nk::derive_seed(seed, 0xE7A15EED); }

// Human table on stdout, records both on stdout and in <out>/<name>.records.
void emit(const Globals& g, const std::string& name, const std::string& table,
          const std::vector<Record>& records) {
  std::cout << table;
  std::ofstream rf(out_path(g, name + ".records"), std::ios::trunc);
  if (!rf) throw IoError("cannot write records file for " + name);
  for (const Record& r : records) {
    std::cout << r.str() << "\n";
    rf << r.str() << "\n";
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Multi-task multi-domain two-tower ranker"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Run configuration file");
  app.add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { g.seed = s; g.seed_set = true; },
                                         "Seed for data, initialization and batch order");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  std::size_t gen_n = 0;
  std::string gen_split = "train", gen_file;
  gen->add_option("-n,--count", gen_n, "Number of examples (default from config)");
  gen->add_option("--split", gen_split, "train or eval; eval draws with a derived seed")
      ->check(CLI::IsMember({"train", "eval"}));
  gen->add_option("--file", gen_file, "Output file name (default <split>.tsv)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the unified model");
  std::string train_data = "train.tsv", train_model = "model.ckpt";
  std::size_t train_steps = 0, log_every = 100;
  train_cmd->add_option("--data", train_data, "Training dataset")->capture_default_str();
  train_cmd->add_option("--model", train_model, "Checkpoint file to write")->capture_default_str();
  train_cmd->add_option("--steps", train_steps, "Override train.steps");
  train_cmd->add_option("--log-every", log_every, "Loss record cadence")->capture_default_str();

  // train-baselines
  auto* tb = app.add_subcommand("train-baselines", "Train one baseline per domain");
  std::string tb_data = "train.tsv", tb_prefix = "baseline";
  std::size_t tb_steps = 0;
  tb->add_option("--data", tb_data, "Training dataset")->capture_default_str();
  tb->add_option("--prefix", tb_prefix, "Checkpoint name prefix")->capture_default_str();
  tb->add_option("--steps", tb_steps, "Total step budget split over the baselines (default train.steps)");

  // eval
  auto* ev = app.add_subcommand("eval", "LogMAE of a checkpoint on a dataset");
  std::string ev_data = "eval.tsv", ev_model = "model.ckpt";
  ev->add_option("--data", ev_data, "Evaluation dataset")->capture_default_str();
  ev->add_option("--model", ev_model, "Checkpoint")->capture_default_str();

  // compare
  auto* cmp = app.add_subcommand("compare", "Unified model vs per-domain baselines");
  std::string cmp_data = "eval.tsv", cmp_model = "model.ckpt", cmp_prefix = "baseline";
  cmp->add_option("--data", cmp_data, "Evaluation dataset")->capture_default_str();
  cmp->add_option("--model", cmp_model, "Unified checkpoint")->capture_default_str();
  cmp->add_option("--prefix", cmp_prefix, "Baseline checkpoint name prefix")->capture_default_str();

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train and evaluate ablation variants");
  std::vector<std::string> abl_variants;
  std::size_t abl_seeds = 0, abl_steps = 0, abl_train = 0, abl_eval = 0;
  abl->add_option("--variants", abl_variants, "Variants (default from config)")->delimiter(',');
  abl->add_option("--seeds", abl_seeds, "Number of seeds (default from config)");
  abl->add_option("--steps", abl_steps, "Steps per run (default ablate.steps or train.steps)");
  abl->add_option("--n-train", abl_train, "Training examples (default data.n_train)");
  abl->add_option("--n-eval", abl_eval, "Evaluation examples (default data.n_eval)");

  // export-emb
  auto* ex = app.add_subcommand("export-emb", "Export tower embeddings");
  std::string ex_data = "eval.tsv", ex_model = "model.ckpt", ex_file = "items.emb", ex_side = "item";
  ex->add_option("--data", ex_data, "Examples to embed")->capture_default_str();
  ex->add_option("--model", ex_model, "Checkpoint")->capture_default_str();
  ex->add_option("--file", ex_file, "Output file name")->capture_default_str();
  ex->add_option("--side", ex_side, "item or query")->check(CLI::IsMember({"item", "query"}))->capture_default_str();

  // rank
  auto* rk = app.add_subcommand("rank", "Top-k items from an embedding store for one query");
  std::string rk_data = "eval.tsv", rk_model = "model.ckpt", rk_store = "items.emb", rk_task = "CTR";
  std::size_t rk_k = 10;
  std::uint64_t rk_query = 0;
  rk->add_option("--data", rk_data, "Dataset holding the query example")->capture_default_str();
  rk->add_option("--model", rk_model, "Checkpoint")->capture_default_str();
  rk->add_option("--store", rk_store, "Item embedding file")->capture_default_str();
  rk->add_option("--query", rk_query, "Example id of the query")->capture_default_str();
  rk->add_option("--task", rk_task, "CTR, GCTR or OCTR")->check(CLI::IsMember({"CTR", "GCTR", "OCTR"}))->capture_default_str();
  rk->add_option("-k", rk_k, "Number of rows")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const RunConfig cfg = load_run_config(g);

  if (*gen) {
    const bool is_eval = gen_split == "eval";
    const std::size_t n = gen_n ? gen_n : (is_eval ? cfg.data.n_eval : cfg.data.n_train);
    const std::string file = out_path(g, gen_file.empty() ? gen_split + ".tsv" : gen_file);
    TeacherOracle oracle(cfg.schema, cfg.world);
    const auto examples =
        generate_dataset(oracle, is_eval ? eval_seed(cfg.seed) : cfg.seed, n, cfg.data.mix, file);
    std::size_t per[kNumDomains] = {};
    for (const Example& e : examples) ++per[e.domain.index()];
    std::vector<Record> recs;
    std::string table = "wrote " + std::to_string(examples.size()) + " examples to " + file + "\n";
    for (DomainKey d : all_domains()) {
      table += "  " + detail::pad_right(d.str(), 20) + std::to_string(per[d.index()]) + "\n";
      recs.push_back(Record("gen_domain").add("surface", name(d.surface)).add("product", name(d.product)).add("count", per[d.index()]));
    }
    recs.push_back(Record("gen").add("file", file).add("count", examples.size()).add("schema_hash", hash_hex(cfg.schema.hash())));
    emit(g, "gen", table, recs);
    return kExitOk;
  }

  if (*train_cmd) {
    const Dataset data = read_dataset(in_path(g, train_data), cfg.schema);
    TrainConfig tc = cfg.train;
    if (train_steps) tc.steps = train_steps;
    MtmdModel model(cfg.schema, cfg.model, nk::derive_seed(cfg.seed, 0x1217));
    const std::string ckpt = out_path(g, train_model);
    const TrainHistory h = train(model, data, tc, [&](std::size_t step) {
      save_checkpoint(ckpt, model, cfg);
      std::cerr << "checkpoint at step " << step << "\n";
    });
    save_checkpoint(ckpt, model, cfg);
    std::vector<Record> recs;
    std::string table = "step        loss\n";
    for (std::size_t s = 0; s < h.total.size(); ++s) {
      if ((s + 1) % std::max<std::size_t>(1, log_every) != 0 && s + 1 != h.total.size() && s != 0) continue;
      table += detail::pad(std::to_string(s + 1), 4) + "  " + detail::fmt("%.6f", h.total[s]) + "\n";
      recs.push_back(Record("train_step")
                         .add("step", s + 1)
                         .add("loss", h.total[s])
                         .add("CTR", h.task[s][0])
                         .add("GCTR", h.task[s][1])
                         .add("OCTR", h.task[s][2]));
    }
    table += "non-embedding params " + std::to_string(model.non_embedding_params()) + ", embedding params " +
             std::to_string(model.embedding_params()) + "\nwrote " + ckpt + "\n";
    recs.push_back(Record("train")
                       .add("checkpoint", ckpt)
                       .add("steps", tc.steps)
                       .add("non_embedding_params", model.non_embedding_params())
                       .add("embedding_params", model.embedding_params()));
    emit(g, "train", table, recs);
    return kExitOk;
  }

  if (*tb) {
    const Dataset data = read_dataset(in_path(g, tb_data), cfg.schema);
    std::size_t nonempty = 0;
    for (DomainKey d : all_domains()) nonempty += !domain_slice(data.examples, d).empty();
    if (nonempty == 0) throw DataError("train-baselines: empty dataset");
    TrainConfig tc = cfg.train;
    tc.steps = std::max<std::size_t>(1, (tb_steps ? tb_steps : cfg.train.steps) / nonempty);
    const BaselineSet set = train_baselines(cfg.schema, cfg.model, data.examples, tc, nk::derive_seed(cfg.seed, 0xBA5E));
    for (const auto& w : set.warnings) std::cerr << "warning: " << w << "\n";
    std::string table = "domain              examples  steps  final loss\n";
    std::vector<Record> recs;
    for (const auto& [d, model] : set.models) {
      const std::string file = out_path(g, tb_prefix + "." + std::string(name(d.surface)) + "." +
                                               std::string(name(d.product)) + ".ckpt");
      save_checkpoint(file, *model, cfg);
      const double last = set.history.at(d).total.back();
      table += detail::pad_right(d.str(), 20) + detail::pad(std::to_string(set.slice_sizes.at(d)), 8) +
               detail::pad(std::to_string(tc.steps), 7) + "  " + detail::fmt("%.6f", last) + "\n";
      recs.push_back(Record("baseline")
                         .add("surface", name(d.surface))
                         .add("product", name(d.product))
                         .add("examples", set.slice_sizes.at(d))
                         .add("steps", tc.steps)
                         .add("final_loss", last)
                         .add("checkpoint", file));
    }
    emit(g, "train-baselines", table, recs);
    return kExitOk;
  }

  if (*ev) {
    const auto model = mtmd_from_checkpoint(read_checkpoint(in_path(g, ev_model)));
    const Dataset data = read_dataset(in_path(g, ev_data), model->schema());
    const EvalReport r = evaluate(*model, data.examples);
    emit(g, "eval", format_eval_table(r), eval_records(r));
    return kExitOk;
  }

  if (*cmp) {
    const auto model = mtmd_from_checkpoint(read_checkpoint(in_path(g, cmp_model)));
    const Dataset data = read_dataset(in_path(g, cmp_data), model->schema());
    BaselineSet set;
    for (DomainKey d : all_domains()) {
      const std::string file = in_path(g, cmp_prefix + "." + std::string(name(d.surface)) + "." +
                                              std::string(name(d.product)) + ".ckpt");
      if (!fs::exists(file)) {
        std::cerr << "warning: no baseline checkpoint for " << d.str() << "\n";
        continue;
      }
      set.models[d] = baseline_from_checkpoint(read_checkpoint(file));
    }
    const CompareGrid grid = compare_unified_vs_baselines(*model, set, data.examples);
    emit(g, "compare", format_grid(grid), grid_records(grid));
    return kExitOk;
  }

  if (*abl) {
    std::vector<AblationVariant> variants = cfg.ablate.variants;
    if (!abl_variants.empty()) {
      variants.clear();
      for (const auto& s : abl_variants) {
        auto v = parse_variant(s);
        if (!v) throw ConfigError("unknown ablation variant '" + s + "'");
        variants.push_back(*v);
      }
    }
    const std::size_t nseeds = abl_seeds ? abl_seeds : cfg.ablate.seeds;
    TrainConfig tc = cfg.train;
    tc.steps = abl_steps ? abl_steps : (cfg.ablate.steps ? cfg.ablate.steps : cfg.train.steps);
    TeacherOracle oracle(cfg.schema, cfg.world);
    const auto train_set = generate_examples(oracle, cfg.seed, abl_train ? abl_train : cfg.data.n_train, cfg.data.mix);
    const auto eval_set = generate_examples(oracle, eval_seed(cfg.seed), abl_eval ? abl_eval : cfg.data.n_eval, cfg.data.mix);
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < nseeds; ++i) seeds.push_back(cfg.seed + i);
    const AblationReport r = run_ablation(variants, cfg.schema, cfg.model, tc, train_set, eval_set, seeds,
                                          [](const AblationRun& run) {
                                            std::cerr << "seed " << run.seed << " " << name(run.variant)
                                                      << " LogMAE " << run.log_mae << "\n";
                                          });
    std::vector<AblationVariant> shown{AblationVariant::kFull};
    for (AblationVariant v : variants)
      if (v != AblationVariant::kFull) shown.push_back(v);
    emit(g, "ablate", format_ablation(r, shown), ablation_records(r));
    return kExitOk;
  }

  if (*ex) {
    const auto model = mtmd_from_checkpoint(read_checkpoint(in_path(g, ex_model)));
    const Dataset data = read_dataset(in_path(g, ex_data), model->schema());
    const std::string file = out_path(g, ex_file);
    export_embeddings(*model, data.examples, file, ex_side == "item" ? Side::kItem : Side::kQuery);
    std::string table = "wrote " + std::to_string(data.examples.size()) + " " + ex_side + " rows to " + file + "\n";
    Record rec("export");
    rec.add("file", file).add("side", ex_side).add("rows", data.examples.size());
    for (const TaskLayout& l : model_layout(model->config())) {
      table += "  " + std::string(name(l.task)) + " deep " + std::to_string(l.deep_dim) + " shallow " +
               std::to_string(l.shallow_dim) + "\n";
      rec.add(std::string(name(l.task)) + "_deep", static_cast<std::size_t>(l.deep_dim))
          .add(std::string(name(l.task)) + "_shallow", static_cast<std::size_t>(l.shallow_dim));
    }
    emit(g, "export-emb", table, {rec});
    return kExitOk;
  }

  if (*rk) {
    const auto model = mtmd_from_checkpoint(read_checkpoint(in_path(g, rk_model)));
    const Dataset data = read_dataset(in_path(g, rk_data), model->schema());
    const EmbeddingStore store = import_embeddings(in_path(g, rk_store));
    const Example* query = nullptr;
    for (const Example& e : data.examples)
      if (e.id == rk_query) query = &e;
    if (!query) throw DataError("rank: no example with id " + std::to_string(rk_query));
    const TaskId task = *parse_task(rk_task);
    const auto top = rank_top_k(*model, *query, store, rk_k, task);
    std::string table = "rank  item id        P(" + rk_task + ")\n";
    std::vector<Record> recs;
    for (std::size_t i = 0; i < top.size(); ++i) {
      table += detail::pad(std::to_string(i + 1), 4) + "  " + detail::pad_right(std::to_string(top[i].id), 12) +
               "  " + detail::fmt("%.6f", top[i].prob) + "\n";
      recs.push_back(Record("rank")
                         .add("rank", i + 1)
                         .add("item", static_cast<std::size_t>(top[i].id))
                         .add("task", rk_task)
                         .add("prob", top[i].prob));
    }
    emit(g, "rank", table, recs);
    return kExitOk;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const mtmd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const mtmd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
