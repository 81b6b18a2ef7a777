#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>

#include "muse/muse.h"

namespace {

const char* kConfig = R"(seed = 2
data.n = 120
data.k_text = 2
data.d_text = 3
data.k_image = 2
data.d_image = 3
model.hidden = 4
train.search_epochs = 1
train.retrain_epochs = 1
)";

std::string take(char* s) {
    std::string out = s ? s : "";
    muse_string_free(s);
    return out;
}

std::filesystem::path temp(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("muse_capi_" + name);
}

}  // namespace

TEST(CApi, StatusNames) {
    EXPECT_STREQ(muse_status_name(MUSE_OK), "ok");
    EXPECT_STREQ(muse_status_name(MUSE_ERR_DATA), "data error");
    EXPECT_EQ(MUSE_ERR_CONFIG, 2);
    EXPECT_EQ(MUSE_ERR_DATA, 3);
    EXPECT_EQ(MUSE_ERR_NUMERIC, 4);
}

TEST(CApi, NullArgumentsAreContractErrors) {
    EXPECT_EQ(muse_config_default(nullptr), MUSE_ERR_CONTRACT);
    EXPECT_NE(std::string(muse_last_error()).find("out must not be NULL"), std::string::npos);
    muse_model* m = nullptr;
    EXPECT_EQ(muse_discretize(nullptr, &m), MUSE_ERR_CONTRACT);
    EXPECT_EQ(m, nullptr);
    muse_config_free(nullptr);
    muse_dataset_free(nullptr);
    muse_model_free(nullptr);
    muse_report_free(nullptr);
}

TEST(CApi, ConfigErrors) {
    muse_config* c = nullptr;
    EXPECT_EQ(muse_config_parse("nope = 1\n", &c), MUSE_ERR_CONFIG);
    EXPECT_NE(std::string(muse_last_error()).find("unknown config key 'nope'"), std::string::npos);
    ASSERT_EQ(muse_config_parse(kConfig, &c), MUSE_OK);
    EXPECT_EQ(muse_config_set(c, "train.lr", "-1"), MUSE_ERR_CONFIG);
    EXPECT_EQ(muse_config_set(c, "seed", "9"), MUSE_OK);
    uint64_t seed = 0;
    ASSERT_EQ(muse_config_seed(c, &seed), MUSE_OK);
    EXPECT_EQ(seed, 9u);
    char* echo = nullptr;
    ASSERT_EQ(muse_config_echo(c, &echo), MUSE_OK);
    EXPECT_NE(take(echo).find("seed = 9\n"), std::string::npos);
    muse_config_free(c);
    EXPECT_EQ(muse_config_load("/nonexistent/muse.cfg", &c), MUSE_ERR_CONFIG);
}

TEST(CApi, Pipeline) {
    muse_config* c = nullptr;
    ASSERT_EQ(muse_config_parse(kConfig, &c), MUSE_OK);
    muse_dataset* d = nullptr;
    ASSERT_EQ(muse_dataset_generate(c, &d), MUSE_OK);
    muse_dataset_info info{};
    ASSERT_EQ(muse_dataset_get_info(d, &info), MUSE_OK);
    EXPECT_EQ(info.samples, 120u);
    EXPECT_EQ(info.missing_text + info.missing_image, 0u);

    const auto data_path = temp("data.musef");
    ASSERT_EQ(muse_dataset_save(d, data_path.c_str()), MUSE_OK);
    char* msg = nullptr;
    ASSERT_EQ(muse_check_features(data_path.c_str(), &msg), MUSE_OK);
    EXPECT_NE(take(msg).find("120 samples"), std::string::npos);

    muse_dataset* p = nullptr;
    ASSERT_EQ(muse_dataset_corrupt(d, 2, &p), MUSE_OK);
    muse_dataset_info pinfo{};
    ASSERT_EQ(muse_dataset_get_info(p, &pinfo), MUSE_OK);
    EXPECT_EQ(pinfo.missing_text + pinfo.missing_image, 120u);
    muse_dataset* again = nullptr;
    EXPECT_EQ(muse_dataset_corrupt(p, 2, &again), MUSE_ERR_CONTRACT);

    muse_model* searched = nullptr;
    ASSERT_EQ(muse_search(c, d, &searched), MUSE_OK);
    int discrete = 1;
    ASSERT_EQ(muse_model_is_discrete(searched, &discrete), MUSE_OK);
    EXPECT_EQ(discrete, 0);

    const auto ckpt = temp("searched.json");
    ASSERT_EQ(muse_model_save(searched, ckpt.c_str()), MUSE_OK);
    muse_model* loaded = nullptr;
    ASSERT_EQ(muse_model_load(ckpt.c_str(), &loaded), MUSE_OK);
    char *g1 = nullptr, *g2 = nullptr;
    ASSERT_EQ(muse_model_genotype(searched, &g1), MUSE_OK);
    ASSERT_EQ(muse_model_genotype(loaded, &g2), MUSE_OK);
    EXPECT_EQ(take(g1), take(g2));

    muse_model* retrained = nullptr;
    ASSERT_EQ(muse_retrain(c, d, loaded, &retrained), MUSE_OK);
    ASSERT_EQ(muse_model_is_discrete(retrained, &discrete), MUSE_OK);
    EXPECT_EQ(discrete, 1);

    muse_report* r = nullptr;
    ASSERT_EQ(muse_evaluate(c, d, retrained, &r), MUSE_OK);
    size_t rows = 0;
    ASSERT_EQ(muse_report_row_count(r, &rows), MUSE_OK);
    EXPECT_EQ(rows, 1u);
    const char* label = nullptr;
    double acc = -1;
    ASSERT_EQ(muse_report_row(r, 0, &label, &acc), MUSE_OK);
    EXPECT_STREQ(label, "MUSE-discrete");
    EXPECT_GE(acc, 0.0);
    EXPECT_EQ(muse_report_row(r, 1, &label, &acc), MUSE_ERR_CONTRACT);
    char* csv = nullptr;
    ASSERT_EQ(muse_report_csv(r, &csv), MUSE_OK);
    EXPECT_EQ(take(csv).rfind("label,accuracy,", 0), 0u);
    muse_report_free(r);

    muse_dataset* other = nullptr;
    muse_config* c2 = nullptr;
    ASSERT_EQ(muse_config_parse("data.n = 50\n", &c2), MUSE_OK);
    ASSERT_EQ(muse_dataset_generate(c2, &other), MUSE_OK);
    EXPECT_EQ(muse_evaluate(c2, other, retrained, &r), MUSE_ERR_DATA);

    muse_config_free(c2);
    muse_dataset_free(other);
    muse_model_free(retrained);
    muse_model_free(loaded);
    muse_model_free(searched);
    muse_dataset_free(p);
    muse_dataset_free(d);
    muse_config_free(c);
    std::filesystem::remove(data_path);
    std::filesystem::remove(ckpt);
}

TEST(CApi, BadFeatureFile) {
    const auto path = temp("bad.musef");
    std::ofstream(path, std::ios::binary) << "MUSEX";
    char* msg = nullptr;
    EXPECT_EQ(muse_check_features(path.c_str(), &msg), MUSE_ERR_DATA);
    EXPECT_FALSE(take(msg).empty());
    muse_dataset* d = nullptr;
    EXPECT_EQ(muse_dataset_load(path.c_str(), &d), MUSE_ERR_DATA);
    std::filesystem::remove(path);
}

TEST(CApi, ErrorsAreThreadLocal) {
    muse_config* c = nullptr;
    EXPECT_EQ(muse_config_parse("bad\n", &c), MUSE_ERR_CONFIG);
    std::string other;
    std::thread t([&] { other = muse_last_error(); });
    t.join();
    EXPECT_EQ(other, "");
    EXPECT_NE(std::string(muse_last_error()), "");
}
