#pragma once

#include "attack/de.hpp"
#include "attack/grad.hpp"
#include "attack/result.hpp"
#include "defense.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "mesh.hpp"
#include "nn/classifier.hpp"
#include "nn/params.hpp"
#include "nn/train.hpp"
#include "pointcloud.hpp"
#include "random.hpp"
#include "serialize.hpp"
#include "synth.hpp"
