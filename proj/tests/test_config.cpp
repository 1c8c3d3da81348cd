#include <gtest/gtest.h>

#include "sim2p/config.hpp"

using namespace sim2p;
using namespace sim2p::config;

namespace {

std::string message_of(const std::string& text) {
    try {
        parse(text, "run.ini");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Config, EmptyGivesDefaults) {
    const auto c = parse("");
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.net, net::NetConfig{});
    EXPECT_EQ(c.schedule, bridge::BridgeSchedule{});
    EXPECT_EQ(c.train.lr, 1e-4);
    EXPECT_EQ(c.sampler.nStep, 100);
    EXPECT_EQ(c.data.cohort.n, 60);
    EXPECT_EQ(c.adapt.cfg.auxSubset, train::default_adapt_aux());
}

TEST(Config, ParsesSectionsAndLists) {
    const auto c = parse(R"(
seed = 42
[schedule]
kind = ve
sigmaMaxVE = 0.5
[net]
fusion = add
sourceChannel = false
[data]
classMix = 0.5, 0.25, 0.25
site = local
[eval]
stepList = 10,20
auxVariables = mmse,gender
)");
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.data.cohort.seed, 42u);
    EXPECT_EQ(c.train.seed, 42u);
    EXPECT_EQ(c.schedule.kind, bridge::ScheduleKind::VE);
    EXPECT_EQ(c.schedule.sigmaMaxVE, 0.5);
    EXPECT_EQ(c.net.fusion, net::Fusion::Add);
    EXPECT_FALSE(c.net.sourceChannel);
    EXPECT_EQ(c.data.cohort.classMix[0], 0.5);
    EXPECT_EQ(c.data.cohort.site, data::Site::Local);
    EXPECT_EQ(c.eval.stepList, (std::vector<int>{10, 20}));
    EXPECT_EQ(c.eval.auxVariables, (std::vector<std::string>{"mmse", "gender"}));
}

TEST(Config, UnknownKeysRejectedWithPath) {
    EXPECT_NE(message_of("[net]\nembedDims = 32\n").find("net.embedDims"), std::string::npos);
    EXPECT_NE(message_of("[nett]\nembedDim = 32\n").find("nett.embedDim"), std::string::npos);
    EXPECT_NE(message_of("sed = 3\n").find("'sed'"), std::string::npos);
}

TEST(Config, BadValuesNameTheKey) {
    EXPECT_NE(message_of("[train]\nlr = fast\n").find("train.lr"), std::string::npos);
    EXPECT_NE(message_of("[net]\nnBlocks = 2.5\n").find("net.nBlocks"), std::string::npos);
    const auto m = message_of("[data]\nclassMix = 0.4,0.3,0.2\n");
    EXPECT_NE(m.find("data.classMix"), std::string::npos);
    EXPECT_NE(m.find("run.ini"), std::string::npos);
    EXPECT_NE(message_of("[net]\nvolumeSide = 32\n").find("data.volumeSide"), std::string::npos);
    EXPECT_NE(message_of("[adapt]\nauxSubset = age,iq\n").find("iq"), std::string::npos);
    EXPECT_NE(message_of("[schedule]\nkind = vq\n").find("schedule.kind"), std::string::npos);
}

TEST(Config, EchoRoundTrips) {
    const auto c = parse("seed = 9\n[train]\nlr = 0.00025\n[sampler]\nemFraction = 0\n[eval]\nauxVariables = age\n");
    const auto text = to_ini(c);
    const auto back = parse(text);
    EXPECT_EQ(to_ini(back), text);
    EXPECT_EQ(back.train.lr, 0.00025);
    EXPECT_EQ(back.sampler.emFraction, 0.0);
    EXPECT_NE(text.find("[schedule]"), std::string::npos);
    EXPECT_NE(text.find("lr = 0.00025"), std::string::npos);
}
