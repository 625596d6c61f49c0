#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "tablesage/tablesage.hpp"

using namespace tablesage;

namespace {

struct CommonOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> config;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--seed", o.seed, "Seed for every stage (overrides the config file)");
  cmd->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "Artifact directory (overrides the config file)");
}

PipelineConfig resolve(const CommonOptions& o) {
  auto cfg = o.config ? load_config(*o.config) : PipelineConfig{};
  if (o.seed) cfg.set_seed(*o.seed);
  if (o.out) cfg.out = *o.out;
  return cfg;
}

int print_response(const ApiResponse& r) {
  if (r.status != 200) {
    std::cerr << "error: " << r.body << "\n";
    return 1;
  }
  std::cout << r.body << "\n";
  return 0;
}

std::atomic<bool> g_reload{false};
httplib::Server* g_server = nullptr;

extern "C" void on_signal(int sig) {
  if (sig == SIGHUP) {
    g_reload = true;
  } else if (g_server) {
    g_server->stop();
  }
}

int serve(const PipelineConfig& cfg, const std::optional<std::string>& addr_flag) {
  const auto addr = parse_listen_address(resolve_address(addr_flag, cfg));
  Engine engine(std::make_shared<const EngineState>(load_engine_state(cfg)));
  httplib::Server svr;
  install_routes(svr, engine);
  g_server = &svr;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::signal(SIGHUP, on_signal);

  std::atomic<bool> done{false};
  std::thread reloader([&] {
    while (!done) {
      std::this_thread::sleep_for(std::chrono::milliseconds(200));
      if (!g_reload.exchange(false)) continue;
      try {
        engine.swap(std::make_shared<const EngineState>(load_engine_state(cfg)));
        std::cerr << "reloaded artifacts from " << cfg.out.string() << "\n";
      } catch (const std::exception& e) {
        std::cerr << "reload failed, keeping previous state: " << e.what() << "\n";
      }
    }
  });

  int port = addr.port;
  if (port == 0) {
    port = svr.bind_to_any_port(addr.host);
  } else if (!svr.bind_to_port(addr.host, port)) {
    port = -1;
  }
  int rc = 0;
  if (port < 0) {
    std::cerr << "error: cannot listen on " << addr.host << ":" << addr.port << "\n";
    rc = 1;
  } else {
    std::cout << "listening on " << addr.host << ":" << port << std::endl;
    if (!svr.listen_after_bind()) rc = 1;
  }
  done = true;
  reloader.join();
  g_server = nullptr;
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tablesage: similarity search over financial statement tables"};
  app.require_subcommand(1);
  CommonOptions common;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus under <out>/synth");
  auto* ingest = app.add_subcommand("ingest", "Parse the tables named by a manifest into <out>/corpus.json");
  std::optional<std::string> manifest;
  ingest->add_option("manifest", manifest, "Manifest CSV (default: <out>/synth/manifest.csv)");
  auto* embed = app.add_subcommand("train-embedding", "Train skip-gram word vectors on the corpus");
  auto* train = app.add_subcommand("train-classifier", "Train the LSTM table classifier");
  auto* index = app.add_subcommand("build-index", "Compute probability vectors for every table");
  auto* eval = app.add_subcommand("eval", "Write classification and row-similarity reports");
  std::optional<std::string> ground_truth;
  eval->add_option("--ground-truth", ground_truth, "Row-similarity ground truth file");
  auto* project = app.add_subcommand("project", "Export a 2-d t-SNE projection of the probability vectors");

  auto* query = app.add_subcommand("query", "Similar tables or rows");
  query->require_subcommand(1);
  auto* qtable = query->add_subcommand("table", "Nearest tables to a table");
  std::string qt_id;
  std::optional<std::size_t> k;
  qtable->add_option("id", qt_id, "Table id")->required();
  qtable->add_option("-k,--k", k, "Number of tables (default from config)");
  auto* qrow = query->add_subcommand("row", "Nearest rows in the neighbouring tables");
  std::string qr_id;
  int qr_row = 0;
  std::optional<std::size_t> n;
  qrow->add_option("id", qr_id, "Table id")->required();
  qrow->add_option("ordinal", qr_row, "Row ordinal")->required();
  qrow->add_option("-n,--n", n, "Number of rows (default from config)");

  auto* filter = app.add_subcommand("filter", "Apply a numeric range / year filter to a table");
  std::string f_id, f_expr;
  filter->add_option("id", f_id, "Table id")->required();
  filter->add_option("expr", f_expr, "Filter expression, e.g. \"gt 20 and lt 500\"")->required();

  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API");
  std::optional<std::string> addr;
  serve_cmd->add_option("--addr", addr, "host:port (default: TABLESAGE_ADDR, then service.addr)");

  for (auto* c : {synth, ingest, embed, train, index, eval, project, qtable, qrow, filter, serve_cmd})
    add_common(c, common);

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = resolve(common);
    if (synth->parsed()) {
      const auto sc = run_synth(cfg);
      std::cout << "wrote " << sc.tables.size() << " tables to " << ArtifactPaths(cfg.out).synth_dir().string()
                << "\n";
    } else if (ingest->parsed()) {
      if (manifest) cfg.manifest = *manifest;
      const auto c = run_ingest(cfg);
      std::cout << "ingested " << c.tables.size() << " tables into " << ArtifactPaths(cfg.out).corpus().string()
                << "\n";
    } else if (embed->parsed()) {
      const auto r = run_train_embedding(cfg);
      std::cout << "vocabulary " << r.embedding.vocab.size() << " words, dim " << r.embedding.matrix.dim
                << ", final loss " << format_fixed(r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back(), 6) << "\n";
    } else if (train->parsed()) {
      const auto r = run_train_classifier(cfg);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
      const auto& last = r.log.back();
      std::cout << "trained " << r.model.labels.size() << " classes for " << last.epoch
                << " epochs, test accuracy " << format_fixed(last.test_accuracy, 2) << "%\n";
    } else if (index->parsed()) {
      const auto idx = run_build_index(cfg);
      std::cout << "indexed " << idx.size() << " tables\n";
    } else if (eval->parsed()) {
      if (ground_truth) cfg.ground_truth = *ground_truth;
      const auto o = run_eval(cfg);
      std::cout << "accuracy " << format_fixed(o.classification.accuracy, 2) << "% weighted precision "
                << format_fixed(o.classification.weighted_precision, 4) << " weighted recall "
                << format_fixed(o.classification.weighted_recall, 4) << "\n";
      std::cout << "knn accuracy " << format_fixed(o.knn_accuracy, 2) << "%\n";
      for (const auto& r : o.rowsim)
        std::cout << "hit rate " << to_string(r.method) << " average " << format_fixed(r.average, 2) << " pooled "
                  << format_fixed(r.pooled, 2) << "\n";
      for (const auto& note : o.notes) std::cout << "note: " << note << "\n";
    } else if (project->parsed()) {
      const auto pts = run_project(cfg);
      std::cout << "projected " << pts.size() << " tables to " << ArtifactPaths(cfg.out).projection().string()
                << "\n";
    } else if (qtable->parsed()) {
      const ArtifactPaths p(cfg.out);
      load_corpus_artifact(p);
      if (!fs::exists(p.model())) throw StageError(p.model().filename().string(), "train-classifier");
      if (!fs::exists(p.index())) throw StageError(p.index().filename().string(), "build-index");
      const auto s = load_engine_state(cfg);
      std::map<std::string, std::string> q;
      if (k) q["k"] = std::to_string(*k);
      return print_response(route(&s, "GET", "/tables/" + qt_id + "/similar", q, ""));
    } else if (qrow->parsed()) {
      const ArtifactPaths p(cfg.out);
      load_corpus_artifact(p);
      if (!fs::exists(p.embedding())) throw StageError(p.embedding().filename().string(), "train-embedding");
      if (!fs::exists(p.model())) throw StageError(p.model().filename().string(), "train-classifier");
      if (!fs::exists(p.index())) throw StageError(p.index().filename().string(), "build-index");
      const auto s = load_engine_state(cfg);
      std::map<std::string, std::string> q;
      if (n) q["n"] = std::to_string(*n);
      return print_response(
          route(&s, "GET", "/tables/" + qr_id + "/rows/" + std::to_string(qr_row) + "/similar", q, ""));
    } else if (filter->parsed()) {
      const auto s = load_engine_state(cfg);
      const auto body = nlohmann::json{{"query", f_expr}}.dump();
      return print_response(route(&s, "POST", "/tables/" + f_id + "/filter", {}, body));
    } else if (serve_cmd->parsed()) {
      return serve(cfg, addr);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
