#include <CLI11.hpp>

#include "ctrlrand/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Control-randomisation experiments: train, dp, evaluate, gradcheck, enumcheck"};
    app.require_subcommand(1);
    ctrlrand::RunOptions opt;
    std::uint64_t seed = 0;
    int threads = 0;
    for (const char* name : {"train", "dp", "evaluate", "gradcheck", "enumcheck"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", opt.config_path, "experiment config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out_dir, "output directory");
        sub->add_option("--seed", seed, "override run.seed");
        sub->add_option("--threads", threads, "override run.threads")->check(CLI::PositiveNumber);
        sub->add_flag("--wallclock", opt.wallclock, "write real wall-clock times in metrics.csv");
    }
    CLI11_PARSE(app, argc, argv);
    auto* sub = app.get_subcommands().front();
    if (sub->count("--seed")) opt.seed = seed;
    if (sub->count("--threads")) opt.threads = threads;
    return ctrlrand::run(sub->get_name(), opt);
}
