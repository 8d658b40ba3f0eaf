// Fit PCA + Gaussian to correlated samples and score a few query points.

#include "tailgen/density/gaussian.hpp"
#include "tailgen/density/pca.hpp"
#include "tailgen/rng.hpp"

#include <iostream>

using namespace tailgen;

int main() {
    CounterRng rng(7);
    Matrix mix = rng.normal_matrix(6, 6) * 0.4 + Matrix::Identity(6, 6);
    const Matrix samples = mix * rng.normal_matrix(6, 2000);

    const PcaModel pca = fit_pca(samples, 3);
    const Matrix reduced = pca.project_columns(samples);
    const GaussianDensity g = fit_gaussian(reduced, false);
    std::cout << "explained variance (k=3): " << pca.explained_variance_total() << "\n";

    const PercentileTable table(g, reduced);
    for (double scale : {0.0, 1.0, 2.0, 4.0}) {
        const Vector e = samples.col(0) * scale;
        const Vector r = pca.project(e);
        const double lp = g.log_pdf(r);
        std::cout << "scale " << scale << ": log p " << lp << ", mahalanobis " << g.mahalanobis(r)
                  << ", percentile " << table.percentile_of(lp) << "\n";
    }
}
