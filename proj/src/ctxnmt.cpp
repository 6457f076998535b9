// Pulls every public header into one translation unit.
#include "ctxnmt/adam.hpp"
#include "ctxnmt/autodiff.hpp"
#include "ctxnmt/bleu.hpp"
#include "ctxnmt/bpe.hpp"
#include "ctxnmt/checkpoint.hpp"
#include "ctxnmt/combiners.hpp"
#include "ctxnmt/config.hpp"
#include "ctxnmt/contrastive.hpp"
#include "ctxnmt/corpus.hpp"
#include "ctxnmt/decode.hpp"
#include "ctxnmt/ensemble.hpp"
#include "ctxnmt/error.hpp"
#include "ctxnmt/gradcheck.hpp"
#include "ctxnmt/model.hpp"
#include "ctxnmt/nmt.hpp"
#include "ctxnmt/params.hpp"
#include "ctxnmt/pipeline.hpp"
#include "ctxnmt/scoring.hpp"
#include "ctxnmt/strategy.hpp"
#include "ctxnmt/synth.hpp"
#include "ctxnmt/tensor.hpp"
#include "ctxnmt/text.hpp"
#include "ctxnmt/train.hpp"
#include "ctxnmt/vocab.hpp"
