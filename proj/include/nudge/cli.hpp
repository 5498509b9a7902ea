#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nudge.hpp"

namespace nudge::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1; // missing files, IO, model or numeric failures
inline constexpr int kExitUsage = 2;   // bad flags or inconsistent configuration

// ---- dataset directories ---------------------------------------------------
//
// <dir>/manifest.json, <dir>/train/00000.npc ..., <dir>/test/00000.npc ...

inline std::string cloud_file_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05zu.npc", i);
    return buf;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline void write_dataset_dir(const fs::path& dir, const Dataset& train, const Dataset& test, json source) {
    json m;
    m["format"] = "NPC1";
    m["classes"] = train.num_classes();
    m["class_names"] = train.class_names;
    m["points"] = train.clouds.empty() ? 0 : train.clouds.front().size();
    m["counts"] = {{"train", train.size()}, {"test", test.size()}};
    m["source"] = std::move(source);
    for (const auto* ds : {&train, &test}) {
        const fs::path sub = dir / (ds->split == Split::train ? "train" : "test");
        for (std::size_t i = 0; i < ds->size(); ++i) save_cloud(sub / cloud_file_name(i), ds->clouds[i]);
    }
    write_text_file(dir / "manifest.json", dump(m));
}

inline json read_manifest(const fs::path& dir) {
    const auto text = read_text_file(dir / "manifest.json");
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest.json: ") + e.what());
    }
}

inline Dataset read_dataset_dir(const fs::path& dir, Split split) {
    const auto m = read_manifest(dir);
    Dataset ds;
    ds.split = split;
    const char* name = split == Split::train ? "train" : "test";
    try {
        ds.class_names = m.at("class_names").get<std::vector<std::string>>();
        const auto n = m.at("counts").at(name).get<std::size_t>();
        for (std::size_t i = 0; i < n; ++i) ds.clouds.push_back(load_cloud(dir / name / cloud_file_name(i)));
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest.json: ") + e.what());
    }
    ds.validate();
    return ds;
}

/// ModelNet-style mesh tree: <root>/<class>/<split>/*.off, classes in name
/// order, meshes in file-name order.
inline Dataset sample_off_tree(const fs::path& root, Split split, std::size_t classes, std::size_t per_class,
                               std::size_t points, std::uint64_t seed) {
    std::vector<fs::path> class_dirs;
    if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (classes) {
        detail::require(classes <= class_dirs.size(), "--classes exceeds the classes found under " + root.string());
        class_dirs.resize(classes);
    }
    detail::require(!class_dirs.empty(), "no class directories under " + root.string());
    Dataset ds;
    ds.split = split;
    const std::uint64_t split_tag = split == Split::train ? 0 : 1;
    for (std::size_t c = 0; c < class_dirs.size(); ++c) {
        ds.class_names.push_back(class_dirs[c].filename().string());
        const fs::path sub = class_dirs[c] / (split == Split::train ? "train" : "test");
        std::vector<fs::path> files;
        if (fs::is_directory(sub))
            for (const auto& e : fs::directory_iterator(sub))
                if (e.path().extension() == ".off") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.size() > per_class) files.resize(per_class);
        for (std::size_t i = 0; i < files.size(); ++i) {
            TriangleMesh mesh;
            try {
                mesh = parse_off(read_text_file(files[i]));
            } catch (const ParseError& e) {
                throw ParseError(files[i].string() + ": " + e.what(), e.line());
            }
            auto cloud = normalize_unit_sphere(sample_mesh_surface(mesh, points, derive_seed(seed, {split_tag, c, i})));
            cloud.label = static_cast<int>(c);
            ds.clouds.push_back(std::move(cloud));
        }
    }
    return ds;
}

// ---- config files ----------------------------------------------------------

/// Appends the flags a JSON config file supplies unless the command line
/// already sets them. Keys are long flag names without dashes; arrays repeat
/// the flag, `true` sets a switch, `false` and null are skipped.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::optional<std::string> path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (!path) return args;
    json cfg;
    const auto text = read_text_file(*path);
    try {
        cfg = json::parse(text);
    } catch (const json::exception& e) {
        throw InvalidInput("config file " + *path + ": " + e.what());
    }
    if (!cfg.is_object()) throw InvalidInput("config file " + *path + " must hold a JSON object");
    auto given = [&](const std::string& flag) {
        for (const auto& a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
        return false;
    };
    auto scalar = [&](const std::string& key, const json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_number()) return v.dump();
        throw InvalidInput("config key '" + key + "' has an unsupported value");
    };
    for (const auto& [key, value] : cfg.items()) {
        const std::string flag = "--" + key;
        if (key == "config" || given(flag)) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) args.push_back(flag);
        } else if (value.is_array()) {
            for (const auto& v : value) {
                args.push_back(flag);
                args.push_back(scalar(key, v));
            }
        } else if (!value.is_null()) {
            args.push_back(flag);
            args.push_back(scalar(key, value));
        }
    }
    return args;
}

// ---- option blocks ---------------------------------------------------------

struct GlobalOptions {
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::string config;
};

struct GenDataOptions {
    std::size_t classes = kSynthClasses;
    std::size_t train_per_class = 40;
    std::size_t test_per_class = 10;
    std::size_t points = 256;
    double jitter = 0.08;
    std::string off_dir;
    std::string out;
    bool classes_given = false;
};

struct TrainOptions {
    std::string arch;
    std::string data;
    std::size_t epochs = 60;
    double lr = 0.01;
    double momentum = 0.9;
    std::size_t batch = 16;
    std::size_t k = 8;
    std::string out;
    std::string log;
};

struct SliceOptions {
    std::string model;
    std::string data;
    std::string split = "test";
    std::size_t samples = 100;
};

struct AttackOptions {
    SliceOptions slice;
    std::string method = "grad";
    std::size_t budget = 1;
    double eps = 0.05;
    std::size_t iters = 10;
    std::size_t pool = 100;
    double cr = 0.7;
    double mutation = 0.5;
    double offset_bound = 0.5;
    bool targeted = false;
    std::string target_class;
    std::optional<double> l2;
    std::string match_run;
    std::string out;
    bool budget_given = false;
};

struct TransferOptions {
    std::string run;
    std::vector<std::string> models;
    std::string out;
};

struct GridOptions {
    SliceOptions slice;
    std::vector<double> eps;
    std::vector<std::size_t> iters;
    std::vector<std::size_t> budgets{1, 10, 150};
    bool targeted = false;
    std::string out;
};

struct DefendOptions {
    SliceOptions slice;
    std::vector<std::size_t> remove_k{0, 8, 16, 32};
    std::vector<std::string> attackers{"weak", "moderate", "strong"};
    std::string out;
};

struct ReportOptions {
    std::vector<std::string> runs;
    std::string out;
};

// ---- shared helpers --------------------------------------------------------

struct LoadedModel {
    std::string path;
    std::string digest;
    nn::Classifier<float> model;

    json describe() const {
        return {{"path", path}, {"arch", nn::to_string(model.params().spec.arch)}, {"digest", digest}};
    }
};

inline LoadedModel load_model(const std::string& path) {
    const auto bytes = read_file(path);
    return {path, fnv1a_hex(bytes), nn::Classifier<float>(nn::decode_checkpoint(bytes))};
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw InvalidInput("--split must be train or test");
}

inline std::uint64_t slice_seed(std::uint64_t seed) { return derive_seed(seed, {0x736c6963ULL}); }

inline json run_header(const char* command, const GlobalOptions& g) {
    return {{"tool", "nudge"}, {"command", command}, {"seed", g.seed}};
}

inline json slice_json(const SliceOptions& s, std::size_t used) {
    return {{"data", s.data}, {"split", s.split}, {"samples", used}};
}

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Wall-clock data lives here so the JSON reports stay byte-identical.
inline void write_timing(const fs::path& dir, const char* command, double total, const std::vector<AttackResult>* per) {
    json t;
    t["command"] = command;
    t["finished_utc"] = utc_now();
    t["total_seconds"] = total;
    if (per) {
        json s = json::array();
        for (const auto& r : *per) s.push_back({{"sample_id", r.sample_id}, {"seconds", r.seconds}});
        t["per_sample"] = std::move(s);
    }
    write_text_file(dir / "timing.json", dump(t));
}

struct Stopwatch {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); }
};

// ---- subcommands -----------------------------------------------------------

inline int cmd_gen_data(const GenDataOptions& o, const GlobalOptions& g, std::ostream& out) {
    detail::require(o.points >= 1, "--points must be >= 1");
    detail::require(o.jitter >= 0, "--jitter must be >= 0");
    Dataset train, test;
    json source;
    if (o.off_dir.empty()) {
        train = synth_dataset(o.train_per_class, o.points, o.jitter, g.seed, Split::train, o.classes);
        test = synth_dataset(o.test_per_class, o.points, o.jitter, g.seed, Split::test, o.classes);
        source = {{"kind", "synthetic"}, {"jitter", o.jitter}};
    } else {
        const std::size_t classes = o.classes_given ? o.classes : 0;
        train = sample_off_tree(o.off_dir, Split::train, classes, o.train_per_class, o.points, g.seed);
        test = sample_off_tree(o.off_dir, Split::test, classes, o.test_per_class, o.points, g.seed);
        test.class_names = train.class_names;
        source = {{"kind", "off"}, {"root", o.off_dir}};
    }
    source["seed"] = g.seed;
    write_dataset_dir(o.out, train, test, source);
    out << "wrote " << train.size() << " train and " << test.size() << " test clouds to " << o.out << "\n";
    return kExitOk;
}

inline int cmd_train(const TrainOptions& o, const GlobalOptions& g, std::ostream& out) {
    const auto arch = nn::parse_arch(o.arch);
    if (!arch) throw InvalidInput("unknown architecture '" + o.arch + "' (mini-pointnet or mini-dgcnn)");
    nn::TrainConfig cfg{o.epochs, o.lr, o.momentum, o.batch, g.seed};
    cfg.validate();
    detail::require(o.lr > 0, "--lr must be > 0");
    const auto train = read_dataset_dir(o.data, Split::train);
    const auto test = read_dataset_dir(o.data, Split::test);
    const auto spec =
        *arch == nn::Arch::pointnet ? nn::ArchSpec::mini_pointnet(train.num_classes()) : nn::ArchSpec::mini_dgcnn(train.num_classes(), o.k);
    auto result = nn::train_model(spec, train, cfg, test.size() ? &test : nullptr, [&](const nn::EpochLog& e) {
        out << "epoch " << e.epoch << " loss " << e.mean_loss << " train_acc " << e.train_acc;
        if (e.test_acc) out << " test_acc " << *e.test_acc;
        out << "\n";
    });
    nn::save_checkpoint(o.out, result.params);
    const fs::path log = o.log.empty() ? fs::path(o.out).replace_extension(".csv") : fs::path(o.log);
    write_text_file(log, nn::training_log_csv(result.log));
    if (!result.log.empty() && result.log.back().test_acc)
        out << "test accuracy " << *result.log.back().test_acc << "\n";
    return kExitOk;
}

inline std::map<std::size_t, double> read_run_l2(const fs::path& run, std::size_t* budget) {
    const auto report = json::parse(read_text_file(run / "report.json"));
    std::map<std::size_t, double> l2;
    for (const auto& s : report.at("samples")) l2[s.at("sample_id").get<std::size_t>()] = s.at("l2").get<double>();
    if (budget) *budget = report.at("config").at("budget").get<std::size_t>();
    return l2;
}

inline int cmd_attack(AttackOptions o, const GlobalOptions& g, std::ostream& out) {
    const bool noise = o.method == "noise";
    if (o.targeted && o.target_class.empty())
        throw InvalidInput("--targeted needs --target-class random|K");
    if (!o.targeted && !o.target_class.empty()) throw InvalidInput("--target-class needs --targeted");
    if (noise && o.targeted) throw InvalidInput("the noise baseline is untargeted");
    if (noise && (o.l2.has_value() == !o.match_run.empty()))
        throw InvalidInput("--method noise needs exactly one of --l2 or --match-run");
    if (!noise && (o.l2 || !o.match_run.empty())) throw InvalidInput("--l2 and --match-run apply to --method noise");
    std::optional<int> fixed_target;
    if (o.targeted && o.target_class != "random") {
        try {
            std::size_t used = 0;
            fixed_target = std::stoi(o.target_class, &used);
            if (used != o.target_class.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw InvalidInput("--target-class must be random or a class index");
        }
    }
    const auto split = parse_split(o.slice.split);
    const AttackMode mode = o.targeted ? AttackMode::targeted : AttackMode::untargeted;

    std::map<std::size_t, double> matched_l2;
    if (!o.match_run.empty()) {
        std::size_t run_budget = 0;
        matched_l2 = read_run_l2(o.match_run, &run_budget);
        if (!o.budget_given) o.budget = run_budget;
    }

    // Configuration checks that need no files.
    if (o.method == "grad") GradAttackConfig{o.eps, o.iters, o.budget, mode, 0}.validate(o.budget);
    if (o.method == "de") {
        DEConfig c;
        c.pool_size = o.pool, c.budget = o.budget, c.crossover_rate = o.cr, c.mutation_factor = o.mutation;
        c.iterations = o.iters, c.offset_bound = o.offset_bound;
        c.validate(o.budget);
    }

    const auto lm = load_model(o.slice.model);
    const auto ds = read_dataset_dir(o.slice.data, split);
    detail::require(ds.num_classes() == lm.model.classes(), "dataset and model disagree on the class count");
    if (fixed_target)
        detail::require(*fixed_target >= 0 && static_cast<std::size_t>(*fixed_target) < ds.num_classes(),
                        "--target-class out of range");
    detail::require(ds.size() == 0 || o.budget <= ds.clouds.front().size(), "--budget exceeds the point count");
    const auto slice = make_samples(ds, select_slice(ds.size(), o.slice.samples, slice_seed(g.seed)));

    json config;
    config["method"] = o.method;
    config["mode"] = to_string(mode);
    config["budget"] = o.budget;
    if (o.method == "grad") {
        config["epsilon"] = o.eps;
        config["iterations"] = o.iters;
    } else if (o.method == "de") {
        config["pool"] = o.pool;
        config["iterations"] = o.iters;
        config["crossover_rate"] = o.cr;
        config["mutation_factor"] = o.mutation;
        config["offset_bound"] = o.offset_bound;
    } else if (o.l2) {
        config["l2"] = *o.l2;
    } else {
        config["match_run"] = o.match_run;
    }
    if (o.targeted) config["target_class"] = o.target_class;
    config["seed"] = g.seed;

    auto target_for = [&](int y, std::size_t id) -> std::optional<int> {
        if (!o.targeted) return std::nullopt;
        if (fixed_target) return fixed_target;
        return random_target_class(y, ds.num_classes(), g.seed, id);
    };

    AttackFn fn = [&](const PointCloud<float>& x, int y, std::size_t id) -> AttackResult {
        if (o.method == "grad")
            return nudge_grad<float>(lm.model, x, y, {o.eps, o.iters, o.budget, mode, target_for(y, id)});
        if (o.method == "de") {
            DEConfig c;
            c.pool_size = o.pool, c.budget = o.budget, c.crossover_rate = o.cr, c.mutation_factor = o.mutation;
            c.iterations = o.iters, c.offset_bound = o.offset_bound, c.mode = mode;
            c.target_class = target_for(y, id);
            c.seed = derive_seed(g.seed, {0x6465ULL, id});
            return nudge_de(lm.model, x, y, c);
        }
        double l2 = 0;
        if (o.l2) {
            l2 = *o.l2;
        } else {
            auto it = matched_l2.find(id);
            if (it == matched_l2.end()) throw InvalidInput("sample " + std::to_string(id) + " missing from --match-run");
            l2 = it->second;
        }
        return random_noise_attack(lm.model, x, y, o.budget, l2, derive_seed(g.seed, {0x6e6f6973ULL, id}));
    };

    Stopwatch sw;
    const auto batch = evaluate_attack_batch(slice, fn, o.method, config, g.jobs);

    const fs::path dir = o.out;
    json samples = json::array();
    for (std::size_t i = 0; i < slice.size(); ++i) {
        const auto& r = batch.results[i];
        auto j = to_json(r);
        const auto name = cloud_file_name(r.sample_id);
        save_cloud(dir / "orig" / name, *slice[i].cloud);
        if (r.error.empty()) {
            save_cloud(dir / "adv" / name, r.adversarial);
            j["adversarial"] = "adv/" + name;
        }
        j["original"] = "orig/" + name;
        samples.push_back(std::move(j));
    }
    json report;
    report["run"] = run_header("attack", g);
    report["run"]["model"] = lm.describe();
    report["run"]["slice"] = slice_json(o.slice, slice.size());
    report["config"] = config;
    report["samples"] = std::move(samples);
    report["summary"] = to_json(batch.summary);
    write_text_file(dir / "report.json", dump(report));
    write_text_file(dir / "summary.csv", summary_csv_header() + summary_csv_row(batch.summary));
    write_timing(dir, "attack", sw.seconds(), &batch.results);
    out << "success_rate " << batch.summary.success_rate << " adv_accuracy " << batch.summary.adv_accuracy
        << " mean_l2 " << batch.summary.mean_l2 << "\n";
    return kExitOk;
}

inline int cmd_transfer(const TransferOptions& o, const GlobalOptions& g, std::ostream& out) {
    detail::require(!o.models.empty(), "transfer needs at least one --model");
    const fs::path run = o.run;
    const auto report_text = read_text_file(run / "report.json");
    json report;
    try {
        report = json::parse(report_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("report.json: ") + e.what());
    }
    std::vector<TransferPair> pairs;
    for (const auto& s : report.at("samples")) {
        if (!s.contains("adversarial")) continue;
        TransferPair p;
        p.sample_id = s.at("sample_id").get<std::size_t>();
        p.original = load_cloud(run / s.at("original").get<std::string>());
        p.adversarial = load_cloud(run / s.at("adversarial").get<std::string>());
        pairs.push_back(std::move(p));
    }
    std::vector<LoadedModel> models;
    for (const auto& m : o.models) models.push_back(load_model(m));
    std::vector<std::pair<std::string, const nn::Classifier<float>*>> targets;
    for (const auto& m : models) targets.emplace_back(m.path, &m.model);

    Stopwatch sw;
    const auto outcomes = transfer_eval(pairs, targets);
    json doc;
    doc["run"] = run_header("transfer", g);
    doc["run"]["source_run"] = o.run;
    doc["run"]["source_report_digest"] =
        fnv1a_hex({reinterpret_cast<const std::uint8_t*>(report_text.data()), report_text.size()});
    doc["source"] = {{"model", report.at("run").at("model")}, {"config", report.at("config")}};
    doc["targets"] = json::array();
    std::string csv = "target,arch,samples,success_rate\n";
    for (std::size_t t = 0; t < outcomes.size(); ++t) {
        json j;
        j["model"] = models[t].describe();
        j["samples"] = pairs.size();
        j["success_rate"] = outcomes[t].success_rate;
        json per = json::array();
        for (std::size_t i = 0; i < pairs.size(); ++i)
            per.push_back({{"sample_id", pairs[i].sample_id}, {"success", static_cast<bool>(outcomes[t].success[i])}});
        j["per_sample"] = std::move(per);
        doc["targets"].push_back(std::move(j));
        csv += models[t].path + "," + nn::to_string(models[t].model.params().spec.arch) + "," +
               std::to_string(pairs.size()) + "," + json(outcomes[t].success_rate).dump() + "\n";
        out << models[t].path << " success_rate " << outcomes[t].success_rate << "\n";
    }
    write_text_file(fs::path(o.out) / "transfer.json", dump(doc));
    write_text_file(fs::path(o.out) / "transfer.csv", csv);
    write_timing(o.out, "transfer", sw.seconds(), nullptr);
    return kExitOk;
}

inline int cmd_grid(const GridOptions& o, const GlobalOptions& g, std::ostream& out) {
    GridSpec grid = GridSpec::reference(o.budgets);
    if (!o.eps.empty()) grid.epsilons = o.eps;
    if (!o.iters.empty()) grid.iterations = o.iters;
    grid.mode = o.targeted ? AttackMode::targeted : AttackMode::untargeted;
    grid.target_seed = g.seed;
    grid.validate();
    const auto split = parse_split(o.slice.split);
    const auto lm = load_model(o.slice.model);
    const auto ds = read_dataset_dir(o.slice.data, split);
    detail::require(ds.num_classes() == lm.model.classes(), "dataset and model disagree on the class count");
    const auto slice = make_samples(ds, select_slice(ds.size(), o.slice.samples, slice_seed(g.seed)));

    Stopwatch sw;
    const auto cells = grid_search(lm.model, slice, grid, g.jobs);
    json doc;
    doc["run"] = run_header("grid", g);
    doc["run"]["model"] = lm.describe();
    doc["run"]["slice"] = slice_json(o.slice, slice.size());
    doc["config"] = {{"epsilons", grid.epsilons},
                     {"iterations", grid.iterations},
                     {"budgets", grid.budgets},
                     {"mode", to_string(grid.mode)}};
    doc["cells"] = json::array();
    std::string csv = summary_csv_header();
    for (const auto& c : cells) {
        json j;
        j["summary"] = to_json(c.batch.summary);
        json per = json::array();
        for (const auto& r : c.batch.results) per.push_back(to_json(r));
        j["samples"] = std::move(per);
        doc["cells"].push_back(std::move(j));
        csv += summary_csv_row(c.batch.summary);
    }
    doc["best"] = json::array();
    std::vector<std::size_t> budgets = grid.budgets;
    std::sort(budgets.begin(), budgets.end());
    budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());
    for (auto b : budgets) {
        const auto& c = best_cell(cells, b);
        doc["best"].push_back({{"budget", b},
                               {"epsilon", c.epsilon},
                               {"iterations", c.iterations},
                               {"success_rate", c.batch.summary.success_rate}});
        out << "budget " << b << " best epsilon " << c.epsilon << " iterations " << c.iterations << " success_rate "
            << c.batch.summary.success_rate << "\n";
    }
    write_text_file(fs::path(o.out) / "grid.json", dump(doc));
    write_text_file(fs::path(o.out) / "grid.csv", csv);
    write_timing(o.out, "grid", sw.seconds(), nullptr);
    return kExitOk;
}

/// Named attackers for defense sweeps: the searched untargeted
/// configurations for 1, 10 and 150 points.
inline Attacker named_attacker(const std::string& name) {
    if (name == "weak") return {name, {0.5, 500, 1}};
    if (name == "moderate") return {name, {0.1, 1000, 10}};
    if (name == "strong") return {name, {0.05, 1000, 150}};
    throw InvalidInput("unknown attacker '" + name + "' (weak, moderate or strong)");
}

inline int cmd_defend_eval(const DefendOptions& o, const GlobalOptions& g, std::ostream& out) {
    detail::require(!o.attackers.empty(), "defend-eval needs at least one attacker");
    std::vector<Attacker> attackers;
    for (const auto& a : o.attackers) attackers.push_back(named_attacker(a));
    const auto split = parse_split(o.slice.split);
    const auto lm = load_model(o.slice.model);
    const auto ds = read_dataset_dir(o.slice.data, split);
    detail::require(ds.num_classes() == lm.model.classes(), "dataset and model disagree on the class count");
    const auto slice = make_samples(ds, select_slice(ds.size(), o.slice.samples, slice_seed(g.seed)));

    Stopwatch sw;
    const auto sweep = defense_sweep(lm.model, slice, attackers, o.remove_k, g.jobs);
    json doc;
    doc["run"] = run_header("defend-eval", g);
    doc["run"]["model"] = lm.describe();
    doc["run"]["slice"] = slice_json(o.slice, slice.size());
    doc["config"]["attackers"] = json::array();
    for (const auto& a : attackers) doc["config"]["attackers"].push_back({{"name", a.name}, {"config", grad_config_json(a.config)}});
    std::vector<std::size_t> ks;
    for (const auto& r : sweep.rows) ks.push_back(r.remove_k);
    doc["config"]["remove_k"] = ks;
    doc["rows"] = json::array();
    std::string csv = "remove_k,attacker,success_rate,clean_accuracy\n";
    for (const auto& r : sweep.rows) {
        json j;
        j["remove_k"] = r.remove_k;
        j["clean_accuracy"] = r.clean_accuracy;
        for (std::size_t a = 0; a < attackers.size(); ++a) {
            j["success_rate"][attackers[a].name] = r.success_rate[a];
            csv += std::to_string(r.remove_k) + "," + attackers[a].name + "," + json(r.success_rate[a]).dump() + "," +
                   json(r.clean_accuracy).dump() + "\n";
        }
        out << "remove_k " << r.remove_k << " clean_accuracy " << r.clean_accuracy << "\n";
        doc["rows"].push_back(std::move(j));
    }
    doc["undefended"] = json::array();
    for (const auto& b : sweep.undefended) {
        json per = json::array();
        for (const auto& r : b.results) per.push_back(to_json(r));
        doc["undefended"].push_back({{"summary", to_json(b.summary)}, {"samples", std::move(per)}});
    }
    write_text_file(fs::path(o.out) / "defense.json", dump(doc));
    write_text_file(fs::path(o.out) / "defense.csv", csv);
    write_timing(o.out, "defend-eval", sw.seconds(), nullptr);
    return kExitOk;
}

/// Re-derives each run's summary from its per-sample records. Exits 1 if a
/// stored summary disagrees.
inline int cmd_report(const ReportOptions& o, std::ostream& out, std::ostream& err) {
    detail::require(!o.runs.empty(), "report needs at least one --run");
    std::string csv = summary_csv_header();
    bool consistent = true;
    for (const auto& run : o.runs) {
        json report;
        const auto text = read_text_file(fs::path(run) / "report.json");
        try {
            report = json::parse(text);
            std::vector<AttackResult> results;
            for (const auto& s : report.at("samples")) results.push_back(attack_result_from_json(s));
            const auto& stored = report.at("summary");
            const auto again = summarize(stored.at("attack").get<std::string>(), stored.at("config"), results);
            if (to_json(again) != stored) {
                err << run << ": stored summary differs from per-sample records\n";
                consistent = false;
            }
            csv += summary_csv_row(again);
        } catch (const json::exception& e) {
            throw ParseError(run + "/report.json: " + e.what());
        }
    }
    if (o.out.empty()) out << csv;
    else write_text_file(o.out, csv);
    return consistent ? kExitOk : kExitFailure;
}

// ---- entry point -----------------------------------------------------------

inline int run(const std::vector<std::string>& raw_args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<std::string> args;
    try {
        args = expand_config(raw_args);
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    CLI::App app{"Nudge attacks on point-cloud classifiers"};
    app.require_subcommand(1);
    GlobalOptions g;
    app.add_option("--seed", g.seed, "Global seed")->envname("NUDGE_SEED");
    app.add_option("--jobs", g.jobs, "Worker threads for per-sample work")->check(CLI::PositiveNumber);
    app.add_option("--config", g.config, "JSON file supplying any flag");

    auto slice_opts = [](CLI::App* c, SliceOptions& s) {
        c->add_option("--model", s.model, "Checkpoint")->required();
        c->add_option("--data", s.data, "Dataset directory")->required();
        c->add_option("--split", s.split, "train or test")->check(CLI::IsMember({"train", "test"}));
        c->add_option("--samples", s.samples, "Slice size")->check(CLI::PositiveNumber);
    };

    GenDataOptions gen;
    auto* c_gen = app.add_subcommand("gen-data", "Write a synthetic or mesh-sampled dataset");
    auto* classes_opt = c_gen->add_option("--classes", gen.classes, "Number of classes");
    c_gen->add_option("--train-per-class", gen.train_per_class);
    c_gen->add_option("--test-per-class", gen.test_per_class);
    c_gen->add_option("--points", gen.points)->check(CLI::PositiveNumber);
    c_gen->add_option("--jitter", gen.jitter);
    c_gen->add_option("--off-dir", gen.off_dir, "Mesh tree <class>/<split>/*.off instead of primitives");
    c_gen->add_option("--out", gen.out)->required();

    TrainOptions tr;
    auto* c_train = app.add_subcommand("train", "Train a classifier");
    c_train->add_option("--arch", tr.arch, "mini-pointnet or mini-dgcnn")->required();
    c_train->add_option("--data", tr.data)->required();
    c_train->add_option("--epochs", tr.epochs);
    c_train->add_option("--lr", tr.lr);
    c_train->add_option("--momentum", tr.momentum);
    c_train->add_option("--batch", tr.batch);
    c_train->add_option("--k", tr.k, "Neighbors for mini-dgcnn")->check(CLI::PositiveNumber);
    c_train->add_option("--out", tr.out, "Checkpoint path")->required();
    c_train->add_option("--log", tr.log, "Training log CSV (default: checkpoint path with .csv)");

    AttackOptions at;
    auto* c_attack = app.add_subcommand("attack", "Attack a slice of a dataset");
    slice_opts(c_attack, at.slice);
    c_attack->add_option("--method", at.method)->check(CLI::IsMember({"grad", "de", "noise"}));
    auto* budget_opt = c_attack->add_option("--budget", at.budget);
    c_attack->add_option("--eps", at.eps);
    c_attack->add_option("--iters", at.iters);
    c_attack->add_option("--pool", at.pool);
    c_attack->add_option("--cr", at.cr);
    c_attack->add_option("--mutation", at.mutation);
    c_attack->add_option("--offset-bound", at.offset_bound);
    c_attack->add_flag("--targeted", at.targeted);
    c_attack->add_option("--target-class", at.target_class, "random or a class index");
    c_attack->add_option("--l2", at.l2, "Noise L2 norm");
    c_attack->add_option("--match-run", at.match_run, "Attack run whose per-sample L2 the noise matches");
    c_attack->add_option("--out", at.out)->required();

    TransferOptions tf;
    auto* c_transfer = app.add_subcommand("transfer", "Replay a prior attack run on other models");
    c_transfer->add_option("--run", tf.run, "Attack output directory")->required();
    c_transfer->add_option("--model", tf.models, "Target checkpoint (repeatable)")->required();
    c_transfer->add_option("--out", tf.out)->required();

    GridOptions gr;
    auto* c_grid = app.add_subcommand("grid", "Success rate over epsilon x iterations");
    slice_opts(c_grid, gr.slice);
    c_grid->add_option("--eps", gr.eps);
    c_grid->add_option("--iters", gr.iters);
    c_grid->add_option("--budgets", gr.budgets);
    c_grid->add_flag("--targeted", gr.targeted);
    c_grid->add_option("--out", gr.out)->required();

    DefendOptions df;
    auto* c_defend = app.add_subcommand("defend-eval", "Point-removal defense sweep");
    slice_opts(c_defend, df.slice);
    c_defend->add_option("--remove-k", df.remove_k);
    c_defend->add_option("--attackers", df.attackers)->check(CLI::IsMember({"weak", "moderate", "strong"}));
    c_defend->add_option("--out", df.out)->required();

    ReportOptions rp;
    auto* c_report = app.add_subcommand("report", "Check and tabulate attack runs");
    c_report->add_option("--run", rp.runs, "Attack output directory (repeatable)")->required();
    c_report->add_option("--out", rp.out, "CSV path (default: stdout)");

    for (auto* c : app.get_subcommands({})) c->fallthrough();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    gen.classes_given = classes_opt->count() > 0;
    at.budget_given = budget_opt->count() > 0;

    try {
        if (c_gen->parsed()) return cmd_gen_data(gen, g, out);
        if (c_train->parsed()) return cmd_train(tr, g, out);
        if (c_attack->parsed()) return cmd_attack(at, g, out);
        if (c_transfer->parsed()) return cmd_transfer(tf, g, out);
        if (c_grid->parsed()) return cmd_grid(gr, g, out);
        if (c_defend->parsed()) return cmd_defend_eval(df, g, out);
        return cmd_report(rp, out, err);
    } catch (const InvalidInput& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

} // namespace nudge::cli
