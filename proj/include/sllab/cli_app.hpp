#pragma once

// Command-line surface: one binary, nine subcommands covering the pipeline
// from corpus preparation through training to evaluation artifacts. All
// randomness flows from --seed via derived streams; outputs carry no
// timestamps, so identical inputs and seeds give byte-identical artifacts.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sllab/analysis.hpp"
#include "sllab/checkpoint.hpp"
#include "sllab/classify.hpp"
#include "sllab/config.hpp"
#include "sllab/errors.hpp"
#include "sllab/gradcheck.hpp"
#include "sllab/metrics.hpp"
#include "sllab/model.hpp"
#include "sllab/textdata.hpp"
#include "sllab/training.hpp"

namespace sllab {
namespace cli {

struct LoadedModel {
    ModelConfig cfg;
    ParameterStore store;
};

inline LoadedModel load_model(const std::string& ckpt_path) {
    const CheckpointData ck = load_checkpoint_file(ckpt_path);
    LoadedModel m;
    m.cfg = model_config_from_manifest(ck);
    m.store = params_from_checkpoint(ck);
    return m;
}

inline LabeledCorpus load_encoded_corpus(const std::string& corpus_path,
                                         const std::string& vocab_path) {
    const Vocab v = load_vocab(vocab_path);
    const RawCorpus raw = read_raw_corpus(corpus_path);
    require(!raw.docs.empty(), "corpus '" + corpus_path + "' is empty");
    return encode_corpus(raw, v);
}

inline std::string out_path(const std::string& out_dir, const std::string& name) {
    std::filesystem::create_directories(out_dir);
    return (std::filesystem::path(out_dir) / name).string();
}

inline void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    require(f.good(), "cannot open '" + path + "'");
    f << content;
    require(f.good(), "write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Subcommand bodies

inline void cmd_preprocess(const RunConfig& rc, const std::string& input,
                           const std::string& vocab_path, const std::string& out) {
    std::ifstream in(input);
    require(in.good(), "preprocess: cannot open '" + input + "'");
    PreprocessStats stats;
    RawCorpus raw;
    std::string line;
    while (std::getline(in, line)) {
        std::string text = line;
        std::optional<int> label;
        const auto tab = line.find('\t');
        if (tab != std::string::npos) {
            try {
                std::size_t used = 0;
                const int parsed = std::stoi(line.substr(0, tab), &used);
                if (used == tab) {
                    label = parsed;
                    text = line.substr(tab + 1);
                }
            } catch (const std::exception&) {
                // tab without a numeric prefix: part of the sentence
            }
        }
        const auto tokens = preprocess_line(text, &stats);
        if (tokens.empty()) {
            ++stats.dropped_empty;
            continue;
        }
        raw.docs.push_back(tokens);
        if (label) raw.labels.push_back(*label);
    }
    require(!raw.docs.empty(), "preprocess: nothing left after cleaning '" + input + "'");
    require(raw.labels.empty() || raw.labels.size() == raw.docs.size(),
            "preprocess: mixed labeled and unlabeled lines in '" + input + "'");

    const Vocab vocab =
        vocab_path.empty() ? Vocab::build(raw.docs, rc.vocab_cap) : load_vocab(vocab_path);
    const LabeledCorpus corpus = encode_corpus(raw, vocab, &stats);
    save_corpus(out_path(out, "corpus.tsv"), corpus);
    save_vocab(out_path(out, "vocab.txt"), vocab);
    std::ostringstream line_out;
    line_out << "sentences=" << corpus.size() << " vocab=" << vocab.size()
             << " dropped_empty=" << stats.dropped_empty << " truncated=" << stats.truncated
             << " unk_substitutions=" << stats.unk_substitutions << '\n';
    write_text(out_path(out, "stats.txt"), line_out.str());
    std::cout << line_out.str();
}

inline void cmd_synth(const RunConfig& rc, const std::string& out) {
    const LabeledCorpus corpus = synth_generate(rc.synth);
    save_corpus(out_path(out, "corpus.tsv"), corpus);
    save_vocab(out_path(out, "vocab.txt"), corpus.vocab);
    std::cout << "sentences=" << corpus.size() << " vocab=" << corpus.vocab.size()
              << " classes=" << rc.synth.num_classes << '\n';
}

inline void cmd_train(RunConfig rc, const std::string& corpus_path,
                      const std::string& vocab_path, const std::string& resume,
                      const std::string& out) {
    const LabeledCorpus corpus = load_encoded_corpus(corpus_path, vocab_path);
    if (rc.model.vocab_size == 0) rc.model.vocab_size = corpus.vocab.size();
    require(rc.model.vocab_size == corpus.vocab.size(),
            "train: model.vocab_size does not match the vocabulary file");

    FitOptions opts;
    opts.checkpoint_path = out_path(out, "model.ckpt");
    opts.log_path = out_path(out, "train_log.txt");
    opts.resume_from = resume;
    if (resume.empty()) std::remove(opts.log_path.c_str());  // fresh log per run

    const FitResult res = fit(rc.model, rc.train, corpus.sentences, opts);
    for (const auto& r : res.records) std::cout << r.to_line() << '\n';
    std::cout << "checkpoint=" << opts.checkpoint_path << " global_step=" << res.global_step
              << " skipped_steps=" << res.skipped_steps << '\n';
}

inline void cmd_eval_hoyer(const RunConfig& rc, const std::string& ckpt,
                           const std::string& corpus_path, const std::string& vocab_path,
                           std::uint64_t seed, bool dump_codes, const std::string& out) {
    const LoadedModel m = load_model(ckpt);
    const LabeledCorpus corpus = load_encoded_corpus(corpus_path, vocab_path);
    require(m.cfg.vocab_size == corpus.vocab.size(),
            "eval-hoyer: checkpoint vocabulary size does not match the vocabulary file");

    RngStream rng(seed, "eval-hoyer");
    const TensorData<double> codes =
        latent_codes(m.cfg, m.store, corpus.sentences, rc.eval_mode, rng);
    const HoyerReport rep = average_hoyer_of_codes(codes, rc.eval_mode);
    RngStream rec_rng(seed, "eval-rec");
    const double rec = mean_reconstruction(m.cfg, m.store, corpus.sentences, rc.eval_mode,
                                           rec_rng);
    std::ostringstream line;
    line.precision(10);
    line << rep.to_line() << " reconstruction=" << rec << '\n';
    write_text(out_path(out, "hoyer.txt"), line.str());
    if (dump_codes) write_code_matrix_csv(out_path(out, "codes.csv"), codes);
    std::cout << line.str();
}

inline void cmd_classify(const RunConfig& rc, const std::string& ckpt,
                         const std::string& corpus_path, const std::string& vocab_path,
                         bool simple, const std::string& out) {
    const LabeledCorpus corpus = load_encoded_corpus(corpus_path, vocab_path);
    require(corpus.labeled(), "classify: corpus has no labels");

    if (simple) {
        RunConfig local = rc;
        if (local.model.vocab_size == 0) local.model.vocab_size = corpus.vocab.size();
        require(local.model.vocab_size == corpus.vocab.size(),
                "classify: model.vocab_size does not match the vocabulary file");
        const SimpleClassifierResult res =
            simple_classifier(local.model, corpus, rc.classifier, rc.train);
        std::ostringstream line;
        line.precision(10);
        line << "variant=simple split=holdout accuracy=" << res.holdout.accuracy
             << " correct=" << res.holdout.correct << " total=" << res.holdout.total
             << " seed=" << rc.train.seed << " degenerate=" << (res.degenerate ? 1 : 0)
             << '\n';
        write_text(out_path(out, "simple.txt"), line.str());
        std::cout << line.str();
        return;
    }

    require(!ckpt.empty(), "classify: --ckpt is required unless --simple is given");
    const LoadedModel m = load_model(ckpt);
    require(m.cfg.vocab_size == corpus.vocab.size(),
            "classify: checkpoint vocabulary size does not match the vocabulary file");
    const ProbeResult res = train_classifier(m.cfg, m.store, corpus, rc.classifier, rc.train);
    const std::string line =
        res.to_line(variant_name(m.cfg.variant), rc.classifier.mc_samples, rc.train.seed) +
        "\n";
    write_text(out_path(out, "probe.txt"), line);
    std::cout << line;
}

inline void cmd_analyze_gamma(const std::string& ckpt, const std::string& corpus_path,
                              const std::string& vocab_path, const std::string& out) {
    const LoadedModel m = load_model(ckpt);
    const LabeledCorpus corpus = load_encoded_corpus(corpus_path, vocab_path);
    require(m.cfg.vocab_size == corpus.vocab.size(),
            "analyze-gamma: checkpoint vocabulary size does not match the vocabulary file");
    const std::vector<ClassPattern> patterns = gamma_class(m.cfg, m.store, corpus);
    write_gamma_class_csv(out_path(out, "gamma_class.csv"), patterns);

    // pairwise Hamming distances of the binarized signatures
    std::ostringstream csv;
    csv << "class";
    for (const auto& p : patterns) csv << ',' << p.class_id;
    csv << '\n';
    double mean = 0.0;
    std::size_t pairs = 0;
    for (const auto& a : patterns) {
        csv << a.class_id;
        for (const auto& b : patterns) {
            const std::size_t d = pattern_distance(a, b);
            csv << ',' << d;
            if (a.class_id != b.class_id) {
                mean += double(d);
                ++pairs;
            }
        }
        csv << '\n';
    }
    write_text(out_path(out, "pattern_distance.csv"), csv.str());
    std::cout.precision(10);
    std::cout << "classes=" << patterns.size() << " mean_pattern_distance="
              << (pairs ? mean / double(pairs) : 0.0) << '\n';
}

inline void cmd_class_kl(const std::string& corpus_path, const std::string& vocab_path,
                         const std::string& out) {
    const LabeledCorpus corpus = load_encoded_corpus(corpus_path, vocab_path);
    const ClassKLMatrix m = class_kl_matrix(corpus);
    write_class_kl_csv(out_path(out, "class_kl.csv"), m);
    std::cout.precision(10);
    std::cout << "classes=" << m.class_ids.size()
              << " mean_off_diagonal=" << m.mean_off_diagonal() << '\n';
}

/// Exit 0 only when every finite-difference case passes its threshold.
inline int cmd_gradcheck(std::uint64_t seed) {
    const std::vector<GradCheckCase> cases = run_gradient_suite(seed);
    bool all = true;
    for (const auto& c : cases) {
        std::cout << (c.pass ? "PASS" : "FAIL") << ' ' << c.name
                  << " max_rel_error=" << c.max_rel_error << " threshold=" << c.threshold
                  << '\n';
        all = all && c.pass;
    }
    std::cout << (all ? "gradcheck: all cases passed" : "gradcheck: FAILURES above") << '\n';
    return all ? 0 : 2;
}

inline void cmd_demo_decode(const RunConfig& rc, const std::string& ckpt,
                            const std::string& vocab_path, std::uint64_t seed,
                            const std::string& out) {
    const LoadedModel m = load_model(ckpt);
    const Vocab vocab = load_vocab(vocab_path);
    require(m.cfg.vocab_size == vocab.size(),
            "demo-decode: checkpoint vocabulary size does not match the vocabulary file");

    RngStream rng(seed, "demo-decode");
    std::ostringstream text;
    for (std::size_t i = 0; i < rc.demo_samples; ++i) {
        std::vector<double> z(m.cfg.latent_dim);
        if (m.cfg.variant == Variant::HSVAE) {
            for (auto& v : z) {
                const double a = rng.gamma(m.cfg.prior_alpha);
                const double b = rng.gamma(m.cfg.prior_beta);
                const double gate = a / (a + b);
                v = rng.uniform() < gate ? m.cfg.sigma_spike * rng.normal() : rng.normal();
            }
        } else {
            for (auto& v : z) v = rng.normal();
        }
        const std::vector<int> ids = greedy_decode(m.cfg, m.store, z, rc.demo_max_len);
        const std::vector<std::string> tokens = decode(ids, vocab);
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            text << (t ? " " : "") << tokens[t];
        }
        text << '\n';
    }
    write_text(out_path(out, "samples.txt"), text.str());
    std::cout << text.str();
}

}  // namespace cli

/// Argument surface and dispatch; returns the process exit status
/// (0 success, 1 contract errors and bad usage, 2 numeric errors).
inline int run_cli(std::vector<std::string> args) {
    CLI::App app{"hierarchical sparse sequence autoencoders"};
    app.require_subcommand(1);

    // every value flag maps to a config key; --config supplies the same keys
    // from a file, and explicit flags win
    struct KeyFlags {
        std::vector<std::pair<std::string, CLI::Option*>> map;
        void add(CLI::App* cmd, const std::string& flag, const std::string& key,
                 const std::string& what) {
            map.emplace_back(key,
                             cmd->add_option(flag)->description(what + " [" + key + "]"));
        }
        void apply(RunConfig& rc) const {
            for (const auto& [key, opt] : map) {
                if (opt->count()) rc.set(key, opt->results().back());
            }
        }
    };

    auto add_common = [](CLI::App* cmd, std::string& config, std::string& out) {
        cmd->add_option("--config", config, "key = value config file");
        cmd->add_option("--out", out, "output directory")->capture_default_str();
    };
    auto make_config = [](const std::string& config_path, const KeyFlags& kf) {
        RunConfig rc;
        if (!config_path.empty()) rc.apply_file(config_path);
        kf.apply(rc);
        return rc;
    };

    // --- preprocess
    struct {
        std::string config, out = ".", input, vocab;
        KeyFlags kf;
    } pp;
    {
        CLI::App* cmd = app.add_subcommand(
            "preprocess", "Clean raw text into corpus.tsv + vocab.txt");
        add_common(cmd, pp.config, pp.out);
        cmd->add_option("--input", pp.input, "raw text, optionally label<TAB>sentence")
            ->required();
        cmd->add_option("--vocab", pp.vocab, "reuse an existing vocabulary file");
        pp.kf.add(cmd, "--vocab-cap", "preprocess.vocab_cap", "most-frequent token cap");
        cmd->callback([&] { cli::cmd_preprocess(make_config(pp.config, pp.kf), pp.input,
                                                pp.vocab, pp.out); });
    }

    // --- synth
    struct {
        std::string config, out = ".";
        KeyFlags kf;
    } sy;
    {
        CLI::App* cmd =
            app.add_subcommand("synth", "Generate a labeled synthetic corpus");
        add_common(cmd, sy.config, sy.out);
        sy.kf.add(cmd, "--classes", "synth.classes", "number of classes");
        sy.kf.add(cmd, "--class-vocab", "synth.class_vocab", "exclusive tokens per class");
        sy.kf.add(cmd, "--shared-vocab", "synth.shared_vocab", "shared pool size");
        sy.kf.add(cmd, "--shared-fraction", "synth.shared_fraction",
                  "probability a token is shared");
        sy.kf.add(cmd, "--min-len", "synth.min_len", "shortest sentence");
        sy.kf.add(cmd, "--max-len", "synth.max_len", "longest sentence");
        sy.kf.add(cmd, "--per-class", "synth.per_class", "sentences per class");
        sy.kf.add(cmd, "--seed", "synth.seed", "generation seed");
        cmd->callback([&] { cli::cmd_synth(make_config(sy.config, sy.kf), sy.out); });
    }

    // --- train
    struct {
        std::string config, out = ".", corpus, vocab, resume;
        KeyFlags kf;
    } tr;
    {
        CLI::App* cmd = app.add_subcommand("train", "Fit a model; writes model.ckpt");
        add_common(cmd, tr.config, tr.out);
        cmd->add_option("--corpus", tr.corpus, "corpus.tsv")->required();
        cmd->add_option("--vocab", tr.vocab, "vocab.txt")->required();
        cmd->add_option("--resume", tr.resume, "checkpoint to continue from");
        tr.kf.add(cmd, "--variant", "model.variant",
                  "VAE | VAE_L1 | VAE_L2 | MATVAE | HSVAE");
        tr.kf.add(cmd, "--latent-dim", "model.latent_dim", "latent width");
        tr.kf.add(cmd, "--hidden-dim", "model.hidden_dim", "recurrent width");
        tr.kf.add(cmd, "--embed-dim", "model.embed_dim", "embedding width");
        tr.kf.add(cmd, "--alpha", "model.prior_alpha", "gate prior alpha");
        tr.kf.add(cmd, "--beta", "model.prior_beta", "gate prior beta");
        tr.kf.add(cmd, "--psi", "model.psi", "slab KL weight");
        tr.kf.add(cmd, "--lambda", "model.lambda", "gate KL weight");
        tr.kf.add(cmd, "--penalty-weight", "model.penalty_weight", "L1/L2 penalty weight");
        tr.kf.add(cmd, "--epochs", "train.epochs", "training epochs");
        tr.kf.add(cmd, "--batch", "train.batch_size", "batch size");
        tr.kf.add(cmd, "--lr", "train.learning_rate", "Adam learning rate");
        tr.kf.add(cmd, "--schedule", "train.schedule", "constant | linear KL warmup");
        tr.kf.add(cmd, "--warmup", "train.warmup_steps", "linear warmup steps");
        tr.kf.add(cmd, "--clip", "train.clip_norm", "global gradient-norm limit");
        tr.kf.add(cmd, "--seed", "train.seed", "training seed");
        cmd->callback([&] {
            cli::cmd_train(make_config(tr.config, tr.kf), tr.corpus, tr.vocab, tr.resume,
                           tr.out);
        });
    }

    // --- eval-hoyer
    struct {
        std::string config, out = ".", ckpt, corpus, vocab;
        std::uint64_t seed = 0;
        bool dump_codes = false;
        KeyFlags kf;
    } ev;
    {
        CLI::App* cmd = app.add_subcommand(
            "eval-hoyer", "Average Hoyer + reconstruction of a checkpoint over a corpus");
        add_common(cmd, ev.config, ev.out);
        cmd->add_option("--ckpt", ev.ckpt, "model checkpoint")->required();
        cmd->add_option("--corpus", ev.corpus, "corpus.tsv")->required();
        cmd->add_option("--vocab", ev.vocab, "vocab.txt")->required();
        cmd->add_option("--seed", ev.seed, "sampling seed (posterior-sample mode)");
        cmd->add_flag("--dump-codes", ev.dump_codes, "also write codes.csv");
        ev.kf.add(cmd, "--mode", "eval.mode", "posterior-mean | posterior-sample");
        cmd->callback([&] {
            cli::cmd_eval_hoyer(make_config(ev.config, ev.kf), ev.ckpt, ev.corpus, ev.vocab,
                                ev.seed, ev.dump_codes, ev.out);
        });
    }

    // --- classify
    struct {
        std::string config, out = ".", ckpt, corpus, vocab;
        bool simple = false;
        KeyFlags kf;
    } cl;
    {
        CLI::App* cmd = app.add_subcommand(
            "classify", "Frozen-encoder probe (or --simple jointly-trained baseline)");
        add_common(cmd, cl.config, cl.out);
        cmd->add_option("--ckpt", cl.ckpt, "encoder checkpoint (probe mode)");
        cmd->add_option("--corpus", cl.corpus, "labeled corpus.tsv")->required();
        cmd->add_option("--vocab", cl.vocab, "vocab.txt")->required();
        cmd->add_flag("--simple", cl.simple, "train the joint encoder+classifier baseline");
        cl.kf.add(cmd, "--classes", "classifier.classes", "number of classes");
        cl.kf.add(cmd, "--samples", "classifier.samples", "latent draws per prediction");
        cl.kf.add(cmd, "--hidden-width", "classifier.hidden_width", "MLP width");
        cl.kf.add(cmd, "--holdout", "classifier.holdout_fraction",
                  "per-class fraction for each eval split");
        cl.kf.add(cmd, "--epochs", "train.epochs", "classifier epochs");
        cl.kf.add(cmd, "--batch", "train.batch_size", "batch size");
        cl.kf.add(cmd, "--lr", "train.learning_rate", "Adam learning rate");
        cl.kf.add(cmd, "--seed", "train.seed", "training seed");
        cl.kf.add(cmd, "--latent-dim", "model.latent_dim", "latent width (--simple)");
        cl.kf.add(cmd, "--hidden-dim", "model.hidden_dim", "recurrent width (--simple)");
        cl.kf.add(cmd, "--embed-dim", "model.embed_dim", "embedding width (--simple)");
        cmd->callback([&] {
            cli::cmd_classify(make_config(cl.config, cl.kf), cl.ckpt, cl.corpus, cl.vocab,
                              cl.simple, cl.out);
        });
    }

    // --- analyze-gamma
    struct {
        std::string config, out = ".", ckpt, corpus, vocab;
    } ag;
    {
        CLI::App* cmd = app.add_subcommand(
            "analyze-gamma", "Per-class gate signatures and their Hamming distances");
        add_common(cmd, ag.config, ag.out);
        cmd->add_option("--ckpt", ag.ckpt, "trained sparse-model checkpoint")->required();
        cmd->add_option("--corpus", ag.corpus, "labeled corpus.tsv")->required();
        cmd->add_option("--vocab", ag.vocab, "vocab.txt")->required();
        cmd->callback([&] { cli::cmd_analyze_gamma(ag.ckpt, ag.corpus, ag.vocab, ag.out); });
    }

    // --- class-kl
    struct {
        std::string config, out = ".", corpus, vocab;
    } ck;
    {
        CLI::App* cmd = app.add_subcommand(
            "class-kl", "Pairwise KL between class word distributions");
        add_common(cmd, ck.config, ck.out);
        cmd->add_option("--corpus", ck.corpus, "labeled corpus.tsv")->required();
        cmd->add_option("--vocab", ck.vocab, "vocab.txt")->required();
        cmd->callback([&] { cli::cmd_class_kl(ck.corpus, ck.vocab, ck.out); });
    }

    // --- gradcheck
    struct {
        std::uint64_t seed = 0;
        int status = 0;
    } gc;
    {
        CLI::App* cmd = app.add_subcommand(
            "gradcheck", "Finite-difference certification of every gradient path");
        cmd->add_option("--seed", gc.seed, "randomization seed");
        cmd->callback([&] { gc.status = cli::cmd_gradcheck(gc.seed); });
    }

    // --- demo-decode
    struct {
        std::string config, out = ".", ckpt, vocab;
        std::uint64_t seed = 0;
        KeyFlags kf;
    } dd;
    {
        CLI::App* cmd = app.add_subcommand(
            "demo-decode", "Greedy-decode sentences from prior latent draws");
        add_common(cmd, dd.config, dd.out);
        cmd->add_option("--ckpt", dd.ckpt, "model checkpoint")->required();
        cmd->add_option("--vocab", dd.vocab, "vocab.txt")->required();
        cmd->add_option("--seed", dd.seed, "draw seed");
        dd.kf.add(cmd, "--num", "demo.samples", "sentences to generate");
        dd.kf.add(cmd, "--max-len", "demo.max_len", "decode length limit");
        cmd->callback([&] {
            cli::cmd_demo_decode(make_config(dd.config, dd.kf), dd.ckpt, dd.vocab, dd.seed,
                                 dd.out);
        });
    }

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << '\n';
        return 1;
    } catch (const contract_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 2;
    }
    return gc.status;
}

}  // namespace sllab
