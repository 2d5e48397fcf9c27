// Trains a small model on a generated corpus and prints fold metrics.
#include <iostream>

#include "kcd/kcd.hpp"

int main() {
    kcd::SyntheticOptions so;
    so.documents = 60;
    so.dim = 32;
    so.transe_epochs = 50;
    kcd::SyntheticData synth = kcd::make_synthetic(so);
    kcd::Dataset data = kcd::to_dataset(synth);

    kcd::TrainConfig config;
    config.model.hidden_dim = 16;
    config.model.heads = 4;
    config.epochs = 30;
    config.folds = {0};

    kcd::TrainResult result = kcd::train(data, config);
    for (const auto& f : result.report.folds)
        std::cout << "fold " << f.fold << ": train acc " << f.train.accuracy << ", test acc " << f.test.accuracy << ", macro-F1 "
                  << f.test.macro_f1 << " (" << f.epochs_run << " epochs)\n";
}
