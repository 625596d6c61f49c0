#ifndef TABLESAGE_TABLESAGE_HPP
#define TABLESAGE_TABLESAGE_HPP

#include "tablesage/classifier.hpp"
#include "tablesage/corpus.hpp"
#include "tablesage/embedding.hpp"
#include "tablesage/eval.hpp"
#include "tablesage/html.hpp"
#include "tablesage/lstm.hpp"
#include "tablesage/pipeline.hpp"
#include "tablesage/queryfilter.hpp"
#include "tablesage/random.hpp"
#include "tablesage/service.hpp"
#include "tablesage/similarity.hpp"
#include "tablesage/synth.hpp"
#include "tablesage/tokenize.hpp"

#endif  // TABLESAGE_TABLESAGE_HPP
